#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "twinnet/common.hpp"
#include "twinnet/tensor.hpp"

namespace twinnet::io {

// Versioned binary container: a flat map of named entries, each a string, an
// integer, a double, or a typed tensor. Little-endian on disk; round-trips
// bitwise. Used for checkpoints and cached datasets.
class Container {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  void put_string(const std::string& key, std::string v);
  void put_i64(const std::string& key, int64_t v);
  void put_f64(const std::string& key, double v);
  void put_tensor_f32(const std::string& key, const Shape& shape,
                      std::span<const float> values);
  void put_tensor_f64(const std::string& key, const Shape& shape,
                      std::span<const double> values);

  template <class T>
  void put_tensor(const std::string& key, const Tensor<T>& t) {
    if constexpr (sizeof(T) == 4)
      put_tensor_f32(key, t.shape, *t.values);
    else
      put_tensor_f64(key, t.shape, *t.values);
  }

  bool has(const std::string& key) const;
  std::vector<std::string> keys() const;

  const std::string& get_string(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  // Loads a tensor, converting between f32/f64 if needed.
  template <class T>
  Tensor<T> get_tensor(const std::string& key) const;
  // On-disk dtype width in bytes (4 or 8).
  int tensor_width(const std::string& key) const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);

  void save_bytes(std::vector<uint8_t>& out) const;
  static Container load_bytes(const uint8_t* data, size_t size);

 private:
  enum class Kind : uint8_t { kString = 0, kI64 = 1, kF64 = 2, kTensorF32 = 3, kTensorF64 = 4 };
  struct Entry {
    Kind kind;
    std::string str;
    int64_t i64 = 0;
    double f64 = 0.0;
    Shape shape;
    std::vector<uint8_t> raw;
  };
  const Entry& at(const std::string& key, Kind kind) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace twinnet::io
