#ifndef MOPE_WEIGHTS_IO_HPP_
#define MOPE_WEIGHTS_IO_HPP_

// Little-endian weight file:
//   "MOPE" | version u32 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank,
//               float32 payload.
// Weights are rank 4; bias / gamma / beta are rank 1.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mope/network.hpp"

namespace mope {

inline constexpr char kWeightMagic[4] = {'M', 'O', 'P', 'E'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

class WeightFileError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, unknown_name, bad_rank };

  WeightFileError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(data_[pos_++]); }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string take(std::size_t n) {
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

inline bool is_vector_role(ParamRole r) { return r != ParamRole::weight; }

}  // namespace detail

inline std::string serialize_weights(const ParamStore<float>& params) {
  detail::ByteWriter out;
  out.bytes(kWeightMagic, 4);
  out.u32(kWeightFormatVersion);
  out.u32(static_cast<std::uint32_t>(params.tensor_count()));
  for (const auto& [key, t] : params) {
    const std::string name = key.name();
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name.data(), name.size());
    if (detail::is_vector_role(key.role)) {
      out.u8(1);
      out.u32(static_cast<std::uint32_t>(t.size()));
    } else {
      out.u8(4);
      for (int d : {t.n(), t.c(), t.h(), t.w()}) out.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t.values()) out.f32(v);
  }
  return out.str();
}

inline ParamStore<float> deserialize_weights(std::string bytes) {
  using Kind = WeightFileError::Kind;
  detail::ByteReader in(std::move(bytes));
  if (!in.has(4) || in.take(4) != std::string(kWeightMagic, 4)) {
    throw WeightFileError(Kind::bad_magic, "not a MOPE weight file (bad magic)");
  }
  if (!in.has(8)) throw WeightFileError(Kind::truncated, "truncated header");
  const std::uint32_t version = in.u32();
  if (version != kWeightFormatVersion) {
    throw WeightFileError(Kind::bad_version, "unsupported weight format version " +
                                                 std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  ParamStore<float> params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string where = "tensor " + std::to_string(t);
    if (!in.has(2)) throw WeightFileError(Kind::truncated, "truncated before " + where);
    const std::uint16_t len = in.u16();
    if (!in.has(len)) throw WeightFileError(Kind::truncated, "truncated name of " + where);
    const std::string name = in.take(len);
    const auto key = ParamKey::parse(name);
    if (!key) throw WeightFileError(Kind::unknown_name, "unknown tensor name '" + name + "'");
    if (!in.has(1)) throw WeightFileError(Kind::truncated, "truncated tensor '" + name + "'");
    const std::uint8_t rank = in.u8();
    const std::uint8_t want = detail::is_vector_role(key->role) ? 1 : 4;
    if (rank != want) {
      throw WeightFileError(Kind::bad_rank, "tensor '" + name + "' has rank " +
                                                std::to_string(rank) + ", expected " +
                                                std::to_string(want));
    }
    if (!in.has(4u * rank)) {
      throw WeightFileError(Kind::truncated, "truncated tensor '" + name + "'");
    }
    std::uint32_t dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) dims[d] = in.u32();
    const Shape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    const std::size_t numel = shape.numel();
    if (!in.has(4 * numel)) {
      throw WeightFileError(Kind::truncated, "truncated tensor '" + name + "'");
    }
    std::vector<float> values(numel);
    for (auto& v : values) v = in.f32();
    params.set(*key, Tensor<float>(shape, std::move(values)));
  }
  return params;
}

inline void save_weights(const ParamStore<float>& params,
                         const std::filesystem::path& path) {
  const std::string bytes = serialize_weights(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw WeightFileError(WeightFileError::Kind::io,
                          "cannot open " + path.string() + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw WeightFileError(WeightFileError::Kind::io, "write failed: " + path.string());
  }
}

inline ParamStore<float> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WeightFileError(WeightFileError::Kind::io, "cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(std::move(bytes));
}

}  // namespace mope

#endif  // MOPE_WEIGHTS_IO_HPP_
