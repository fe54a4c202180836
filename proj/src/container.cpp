#include "twinnet/container.hpp"

#include <cstring>
#include <fstream>

namespace twinnet::io {

namespace {

constexpr char kMagic[4] = {'T', 'W', 'N', 'C'};

void append_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class T>
void append_pod(std::vector<uint8_t>& out, T v) {
  append_bytes(out, &v, sizeof(T));
}

struct Reader {
  const uint8_t* p;
  const uint8_t* end;
  void need(size_t n) const {
    if (static_cast<size_t>(end - p) < n)
      throw IoError("container: truncated file");
  }
  void read(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
  }
  template <class T>
  T pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  std::string string(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
};

}  // namespace

void Container::put_string(const std::string& key, std::string v) {
  Entry e;
  e.kind = Kind::kString;
  e.str = std::move(v);
  entries_[key] = std::move(e);
}

void Container::put_i64(const std::string& key, int64_t v) {
  Entry e;
  e.kind = Kind::kI64;
  e.i64 = v;
  entries_[key] = std::move(e);
}

void Container::put_f64(const std::string& key, double v) {
  Entry e;
  e.kind = Kind::kF64;
  e.f64 = v;
  entries_[key] = std::move(e);
}

void Container::put_tensor_f32(const std::string& key, const Shape& shape,
                               std::span<const float> values) {
  if (numel(shape) != static_cast<int64_t>(values.size()))
    throw InvalidArgument("container: tensor shape/value mismatch");
  Entry e;
  e.kind = Kind::kTensorF32;
  e.shape = shape;
  e.raw.resize(values.size() * 4);
  std::memcpy(e.raw.data(), values.data(), e.raw.size());
  entries_[key] = std::move(e);
}

void Container::put_tensor_f64(const std::string& key, const Shape& shape,
                               std::span<const double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size()))
    throw InvalidArgument("container: tensor shape/value mismatch");
  Entry e;
  e.kind = Kind::kTensorF64;
  e.shape = shape;
  e.raw.resize(values.size() * 8);
  std::memcpy(e.raw.data(), values.data(), e.raw.size());
  entries_[key] = std::move(e);
}

bool Container::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::vector<std::string> Container::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

const Container::Entry& Container::at(const std::string& key, Kind kind) const {
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw IoError(str_cat("container: missing entry '", key, "'"));
  if (it->second.kind != kind &&
      !((kind == Kind::kTensorF32 || kind == Kind::kTensorF64) &&
        (it->second.kind == Kind::kTensorF32 || it->second.kind == Kind::kTensorF64)))
    throw IoError(str_cat("container: entry '", key, "' has wrong type"));
  return it->second;
}

const std::string& Container::get_string(const std::string& key) const {
  return at(key, Kind::kString).str;
}

int64_t Container::get_i64(const std::string& key) const {
  return at(key, Kind::kI64).i64;
}

double Container::get_f64(const std::string& key) const {
  return at(key, Kind::kF64).f64;
}

int Container::tensor_width(const std::string& key) const {
  return at(key, Kind::kTensorF32).kind == Kind::kTensorF64 ? 8 : 4;
}

template <class T>
Tensor<T> Container::get_tensor(const std::string& key) const {
  const Entry& e = at(key, Kind::kTensorF32);
  const size_t n = static_cast<size_t>(numel(e.shape));
  auto out = std::make_shared<ValueBuffer<T>>(n);
  if (e.kind == Kind::kTensorF32) {
    const float* src = reinterpret_cast<const float*>(e.raw.data());
    for (size_t i = 0; i < n; ++i) (*out)[i] = static_cast<T>(src[i]);
  } else {
    const double* src = reinterpret_cast<const double*>(e.raw.data());
    for (size_t i = 0; i < n; ++i) (*out)[i] = static_cast<T>(src[i]);
  }
  return Tensor<T>(e.shape, std::move(out));
}

template Tensor<float> Container::get_tensor<float>(const std::string&) const;
template Tensor<double> Container::get_tensor<double>(const std::string&) const;

void Container::save_bytes(std::vector<uint8_t>& out) const {
  out.clear();
  append_bytes(out, kMagic, 4);
  append_pod<uint32_t>(out, kFormatVersion);
  append_pod<uint64_t>(out, entries_.size());
  for (const auto& [key, e] : entries_) {
    append_pod<uint8_t>(out, static_cast<uint8_t>(e.kind));
    append_pod<uint32_t>(out, static_cast<uint32_t>(key.size()));
    append_bytes(out, key.data(), key.size());
    switch (e.kind) {
      case Kind::kString:
        append_pod<uint64_t>(out, e.str.size());
        append_bytes(out, e.str.data(), e.str.size());
        break;
      case Kind::kI64:
        append_pod<int64_t>(out, e.i64);
        break;
      case Kind::kF64:
        append_pod<double>(out, e.f64);
        break;
      case Kind::kTensorF32:
      case Kind::kTensorF64:
        append_pod<uint32_t>(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) append_pod<int64_t>(out, d);
        append_pod<uint64_t>(out, e.raw.size());
        append_bytes(out, e.raw.data(), e.raw.size());
        break;
    }
  }
}

Container Container::load_bytes(const uint8_t* data, size_t size) {
  Reader r{data, data + size};
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("container: bad magic (not a twinnet container)");
  uint32_t version = r.pod<uint32_t>();
  if (version != kFormatVersion)
    throw IoError(str_cat("container: unsupported version ", version));
  uint64_t count = r.pod<uint64_t>();
  Container c;
  for (uint64_t i = 0; i < count; ++i) {
    auto kind = static_cast<Kind>(r.pod<uint8_t>());
    uint32_t klen = r.pod<uint32_t>();
    std::string key = r.string(klen);
    Entry e;
    e.kind = kind;
    switch (kind) {
      case Kind::kString: {
        uint64_t n = r.pod<uint64_t>();
        e.str = r.string(n);
        break;
      }
      case Kind::kI64:
        e.i64 = r.pod<int64_t>();
        break;
      case Kind::kF64:
        e.f64 = r.pod<double>();
        break;
      case Kind::kTensorF32:
      case Kind::kTensorF64: {
        uint32_t rank = r.pod<uint32_t>();
        e.shape.resize(rank);
        for (uint32_t d = 0; d < rank; ++d) e.shape[d] = r.pod<int64_t>();
        uint64_t bytes = r.pod<uint64_t>();
        const int width = kind == Kind::kTensorF64 ? 8 : 4;
        if (bytes != static_cast<uint64_t>(numel(e.shape)) * width)
          throw IoError(str_cat("container: tensor '", key, "' size mismatch"));
        e.raw.resize(bytes);
        r.read(e.raw.data(), bytes);
        break;
      }
      default:
        throw IoError(str_cat("container: unknown entry kind ",
                              static_cast<int>(kind)));
    }
    c.entries_[key] = std::move(e);
  }
  return c;
}

void Container::save(const std::string& path) const {
  std::vector<uint8_t> bytes;
  save_bytes(bytes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(str_cat("container: cannot open '", path, "' for write"));
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(str_cat("container: write failed for '", path, "'"));
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(str_cat("container: cannot open '", path, "'"));
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return load_bytes(bytes.data(), bytes.size());
}

}  // namespace twinnet::io
