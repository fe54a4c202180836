#pragma once

#include <cmath>
#include <functional>
#include <unordered_map>

#include "twinnet/tensor.hpp"

namespace twinnet {

// Reverse-mode gradient tape. Operations are recorded eagerly in execution
// order, which is by construction a topological order; backward() replays
// them in reverse, accumulating adjoints additively. One tape per training
// step; reset() recycles value/grad buffers so steady-state steps allocate
// nothing.
//
// Tapes and the tensors recorded on them are single-threaded. Distinct tapes
// may live on distinct threads.
template <class T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::shared_ptr<ValueBuffer<T>> values;
    ValueBuffer<T> grad;
    bool has_grad = false;
    const char* producer = "leaf";
  };

  // Registers a constant (typically a parameter) as a differentiable leaf.
  // The returned tensor aliases the input storage.
  Tensor<T> watch(const Tensor<T>& t) {
    Tensor<T> out(t.shape, t.values, add_node(t.shape, t.values, "leaf"), this);
    return out;
  }

  int add_node(const Shape& shape, std::shared_ptr<ValueBuffer<T>> values,
               const char* producer) {
    nodes_.push_back(Node{shape, std::move(values), {}, false, producer});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void record(std::function<void(Tape&)> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

  // Gradient buffer for a node, zero-initialized on first touch.
  ValueBuffer<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = alloc_raw(static_cast<size_t>(numel(n.shape)));
      std::fill(n.grad.begin(), n.grad.end(), T(0));
      n.has_grad = true;
    }
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].has_grad; }

  // Gradient of a watched leaf after backward(); empty span if untouched.
  std::span<const T> grad_of(const Tensor<T>& leaf) {
    if (!leaf.tracked() || leaf.tape != this)
      throw InvalidArgument("grad_of: tensor is not a leaf of this tape");
    const Node& n = nodes_[static_cast<size_t>(leaf.node)];
    if (!n.has_grad) return {};
    return {n.grad.data(), n.grad.size()};
  }

  // Reverse sweep from a scalar loss. A second call without reset() throws.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw InvalidArgument(str_cat("backward: loss must be scalar, got shape ",
                                    shape_str(loss.shape)));
    if (!loss.tracked() || loss.tape != this)
      throw InvalidArgument("backward: loss is not recorded on this tape");
    if (backward_done_)
      throw InvalidArgument("backward: tape already swept; reset() first");
    backward_done_ = true;
    grad(loss.node)[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    for (const Node& n : nodes_) {
      if (!n.has_grad) continue;
      for (T g : n.grad) {
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError(str_cat("backward: non-finite adjoint at output of ",
                                     n.producer));
      }
    }
  }

  void reset() {
    // Closures go first so the storage they capture drops to refcount 1 and
    // can be recycled. Parameter storage stays shared with the model and is
    // never pooled.
    ops_.clear();
    for (Node& n : nodes_) {
      if (n.values && n.values.use_count() == 1)
        pool_[n.values->size()].push_back(std::move(*n.values));
      if (n.has_grad) pool_[n.grad.size()].push_back(std::move(n.grad));
    }
    nodes_.clear();
    backward_done_ = false;
  }

  // Registers a scratch buffer for pooling at reset(); no gradient, no graph.
  void stash(const Shape& shape, const std::shared_ptr<ValueBuffer<T>>& buf) {
    nodes_.push_back(Node{shape, buf, {}, false, "aux"});
  }

  std::shared_ptr<ValueBuffer<T>> alloc(size_t n) {
    return std::make_shared<ValueBuffer<T>>(alloc_raw(n));
  }

  size_t num_ops() const { return ops_.size(); }
  size_t num_nodes() const { return nodes_.size(); }

 private:
  ValueBuffer<T> alloc_raw(size_t n) {
    auto& bucket = pool_[n];
    if (!bucket.empty()) {
      ValueBuffer<T> v = std::move(bucket.back());
      bucket.pop_back();
      return v;
    }
    return ValueBuffer<T>(n);
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void(Tape&)>> ops_;
  std::unordered_map<size_t, std::vector<ValueBuffer<T>>> pool_;
  bool backward_done_ = false;
};

}  // namespace twinnet
