#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinnet {

// Thrown on malformed inputs: bad shapes, bad ids, bad files.
struct InvalidArgument : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a forward or backward pass produces a non-finite value.
// The message names the offending operation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on unreadable/corrupt files (IDX, checkpoints, configs).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

// 64-byte-aligned storage for all numeric buffers. Keeping every buffer at
// the same alignment keeps SIMD head/tail peeling identical across
// allocations, which bitwise determinism depends on.
template <class T, size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t) noexcept {
    ::operator delete(p, std::align_val_t(Align));
  }
  template <class U>
  bool operator==(const AlignedAllocator<U, Align>&) const { return true; }
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
};

template <class T>
using ValueBuffer = std::vector<T, AlignedAllocator<T>>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace twinnet
