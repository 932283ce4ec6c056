#pragma once

// Dense row-major float32 matrices and the FEMB binary container.
//
// FEMB layout (little-endian):
//   offset  size  field
//   0       4     magic "FEMB"
//   4       2     version (u16) = 1
//   6       1     dtype (u8) = 1, float32
//   7       1     reserved (u8) = 0
//   8       8     rows (u64)
//   16      4     dim (u32)
//   20      ...   rows * dim float32 values, row-major
//
// Nothing may follow the payload.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "clipdebias/error.hpp"

namespace clipdebias {

class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values)
      : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ == 0 || dim_ == 0) {
      throw DataError("data_model: embedding matrix needs rows >= 1 and dim >= 1");
    }
    if (values_.size() != rows_ * dim_) {
      throw DataError("data_model: embedding payload has " + std::to_string(values_.size()) +
                      " values, expected " + std::to_string(rows_ * dim_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw DataError("data_model: non-finite embedding value at row " +
                        std::to_string(i / dim_) + ", column " + std::to_string(i % dim_));
      }
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  float operator()(std::size_t r, std::size_t c) const { return values_[r * dim_ + c]; }
  std::span<const float> row(std::size_t r) const {
    return {values_.data() + r * dim_, dim_};
  }
  std::span<const float> values() const { return values_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<float> values_;
};

namespace detail {

inline constexpr std::array<char, 4> kFembMagic = {'F', 'E', 'M', 'B'};
inline constexpr std::uint16_t kFembVersion = 1;
inline constexpr std::uint8_t kFembFloat32 = 1;
inline constexpr std::size_t kFembHeaderSize = 20;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits = static_cast<U>(bits >> 8);
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::make_unsigned_t<T> bits = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    bits = static_cast<std::make_unsigned_t<T>>((bits << 8) | p[i]);
  }
  return static_cast<T>(bits);
}

inline std::string read_file_bytes(const std::filesystem::path& path, const char* module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string(module) + ": cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes,
                             const char* module) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(std::string(module) + ": cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(std::string(module) + ": write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(detail::kFembHeaderSize + m.values().size() * 4);
  out.append(detail::kFembMagic.data(), detail::kFembMagic.size());
  detail::put_le<std::uint16_t>(out, detail::kFembVersion);
  detail::put_le<std::uint8_t>(out, detail::kFembFloat32);
  detail::put_le<std::uint8_t>(out, 0);
  detail::put_le<std::uint64_t>(out, m.rows());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  for (float v : m.values()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline EmbeddingMatrix decode_embeddings(std::span<const unsigned char> bytes) {
  if (bytes.size() < detail::kFembHeaderSize) {
    throw FormatError("data_model: FEMB header truncated (" + std::to_string(bytes.size()) +
                      " bytes)");
  }
  if (std::memcmp(bytes.data(), detail::kFembMagic.data(), 4) != 0) {
    throw FormatError("data_model: bad FEMB magic");
  }
  const auto* p = bytes.data();
  const auto version = detail::get_le<std::uint16_t>(p + 4);
  if (version != detail::kFembVersion) {
    throw FormatError("data_model: unsupported FEMB version " + std::to_string(version));
  }
  if (p[6] != detail::kFembFloat32) {
    throw FormatError("data_model: unsupported FEMB dtype " + std::to_string(p[6]));
  }
  if (p[7] != 0) throw FormatError("data_model: FEMB reserved byte must be 0");
  const auto rows = detail::get_le<std::uint64_t>(p + 8);
  const auto dim = detail::get_le<std::uint32_t>(p + 16);
  if (rows == 0 || dim == 0) throw FormatError("data_model: FEMB declares an empty matrix");
  const std::size_t payload = bytes.size() - detail::kFembHeaderSize;
  if (rows > payload / 4 / dim || rows * dim * 4 != payload) {
    throw FormatError("data_model: FEMB payload is " + std::to_string(payload) +
                      " bytes but header declares " + std::to_string(rows) + "x" +
                      std::to_string(dim) + " float32");
  }
  std::vector<float> values(rows * dim);
  const auto* q = p + detail::kFembHeaderSize;
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(q + 4 * i));
  }
  return EmbeddingMatrix(rows, dim, std::move(values));
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path, "data_model");
  return decode_embeddings(
      {reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  detail::write_file_bytes(path, encode_embeddings(m), "data_model");
}

}  // namespace clipdebias
