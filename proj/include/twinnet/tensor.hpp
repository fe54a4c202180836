#pragma once

#include <memory>
#include <span>

#include "twinnet/common.hpp"

namespace twinnet {

template <class T>
class Tape;

inline constexpr int kConstantNode = -1;

// Dense row-major tensor. A Tensor is either a constant (node == -1) or a
// handle into a gradient tape. Storage is shared, never copied on assignment;
// tape leaves created by Tape::watch alias the parameter storage they watch.
template <class T>
struct Tensor {
  Shape shape;
  std::shared_ptr<ValueBuffer<T>> values;
  int node = kConstantNode;
  Tape<T>* tape = nullptr;

  Tensor() = default;
  Tensor(Shape s, std::shared_ptr<ValueBuffer<T>> v, int n = kConstantNode,
         Tape<T>* tp = nullptr)
      : shape(std::move(s)), values(std::move(v)), node(n), tape(tp) {}

  bool defined() const { return values != nullptr; }
  bool tracked() const { return node != kConstantNode; }
  int64_t size() const { return numel(shape); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  std::span<T> data() { return {values->data(), values->size()}; }
  std::span<const T> data() const { return {values->data(), values->size()}; }
  T scalar() const { return (*values)[0]; }
  T& at(int64_t r, int64_t c) { return (*values)[r * cols() + c]; }
  T at(int64_t r, int64_t c) const { return (*values)[r * cols() + c]; }
};

template <class T>
Tensor<T> make_tensor(Shape shape, const std::vector<T>& values) {
  if (numel(shape) != static_cast<int64_t>(values.size()))
    throw InvalidArgument(str_cat("tensor: shape ", shape_str(shape),
                                  " does not match ", values.size(),
                                  " values"));
  return Tensor<T>(std::move(shape), std::make_shared<ValueBuffer<T>>(
                                         values.begin(), values.end()));
}

template <class T>
Tensor<T> zeros(Shape shape) {
  auto n = numel(shape);
  return Tensor<T>(std::move(shape), std::make_shared<ValueBuffer<T>>(
                                         static_cast<size_t>(n), T(0)));
}

template <class T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{}, std::make_shared<ValueBuffer<T>>(1, v));
}

// Deep copy of the storage; result is a constant.
template <class T>
Tensor<T> clone(const Tensor<T>& t) {
  return Tensor<T>(t.shape, std::make_shared<ValueBuffer<T>>(*t.values));
}

}  // namespace twinnet
