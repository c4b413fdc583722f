#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <new>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace modulenet {

/// Cache-line aligned storage. Vectorized reductions peel on alignment, so buffers from different
/// threads must share one alignment for results to stay bit-reproducible across worker counts.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, size_t) { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// Dense row-major array of 32-bit reals, width fastest. Activations are (N, C, H, W).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims, float fill = 0.0f) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(count(dims_), fill);
  }

  Tensor(std::vector<int> dims, const std::vector<float>& data) : dims_(std::move(dims)), data_(data.begin(), data.end()) {
    check_dims();
    if (data_.size() != count(dims_)) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match dims " + shape_string());
    }
  }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-4 accessors.
  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }

  size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }
  float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<int> dims) const {
    Tensor t;
    t.dims_ = std::move(dims);
    t.check_dims();
    if (count(t.dims_) != data_.size()) throw std::invalid_argument("tensor: reshape changes element count");
    t.data_ = data_;
    return t;
  }

  /// Bitwise equality of shape and payload (distinguishes -0.0 from 0.0, NaN payloads).
  bool bit_equal(const Tensor& o) const {
    return dims_ == o.dims_ &&
           (data_.empty() || std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0);
  }

  std::string shape_string() const {
    std::string s = "(";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

  static size_t count(const std::vector<int>& dims) {
    size_t p = 1;
    for (int d : dims) p *= static_cast<size_t>(d);
    return p;
  }

 private:
  void check_dims() const {
    if (dims_.empty() || dims_.size() > 4) throw std::invalid_argument("tensor: rank must be 1-4");
    for (int d : dims_) {
      if (d < 1) throw std::invalid_argument("tensor: every dim must be >= 1, got " + shape_string());
    }
  }

  std::vector<int> dims_;
  FloatBuffer data_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Raised for malformed or truncated binary files; message carries path and byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& out, uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint16_t u16() {
    auto p = take(2);
    return static_cast<uint16_t>(static_cast<uint8_t>(p[0]) | (static_cast<uint8_t>(p[1]) << 8));
  }
  uint32_t u32() {
    auto p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
  }
  std::string_view bytes(size_t n) { return take(n); }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_ + ": " + what + " at offset " + std::to_string(pos_));
  }

 private:
  std::string_view take(size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated (need " + std::to_string(n) + " bytes)");
    std::string_view v(bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }

  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline constexpr char kTensorMagic[4] = {'M', 'N', 'T', 'W'};
inline constexpr uint32_t kTensorFormatVersion = 1;

/// Encodes tensors in the MNTW container: magic, version u32, count u32, then per tensor
/// name-len u16, name, rank u8, dims u32[rank], little-endian f32 payload.
inline std::string encode_tensors(std::span<const NamedTensor> tensors) {
  std::string out(kTensorMagic, 4);
  detail::put_u32(out, kTensorFormatVersion);
  detail::put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long: " + name);
    detail::put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    detail::put_u8(out, static_cast<uint8_t>(t.rank()));
    for (int d : t.dims()) detail::put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.values()) detail::put_u32(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_tensors(std::string bytes, const std::string& origin = "<memory>") {
  detail::ByteReader r(std::move(bytes), origin);
  auto magic = r.bytes(4);
  if (magic != std::string_view(kTensorMagic, 4)) r.fail("bad magic");
  uint32_t version = r.u32();
  if (version != kTensorFormatVersion) r.fail("unsupported version " + std::to_string(version));
  uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = r.u16();
    std::string name(r.bytes(len));
    uint8_t rank = r.u8();
    if (rank < 1 || rank > 4) r.fail("invalid rank " + std::to_string(rank));
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      uint32_t v = r.u32();
      if (v < 1 || v > (1u << 30)) r.fail("invalid dim " + std::to_string(v));
      d = static_cast<int>(v);
    }
    size_t n = Tensor::count(dims);
    std::vector<float> data(n);
    for (size_t k = 0; k < n; ++k) data[k] = std::bit_cast<float>(r.u32());
    out.push_back({std::move(name), Tensor(std::move(dims), std::move(data))});
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return out;
}

inline void save_tensors(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto bytes = encode_tensors(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
  return decode_tensors(detail::read_file_bytes(path), path);
}

}  // namespace modulenet
