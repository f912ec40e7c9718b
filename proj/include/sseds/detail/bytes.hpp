#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "sseds/common.hpp"

namespace sseds::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume a little-endian host");

// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buffer_.append(raw, sizeof(T));
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    buffer_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }

  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }

  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }

  template <typename Derived>
  void put_matrix_rowmajor(const Eigen::DenseBase<Derived>& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) put(static_cast<float>(m(r, c)));
  }

  const std::string& bytes() const { return buffer_; }

 private:
  std::string buffer_;
};

// Bounds-checked reader over an in-memory buffer; throws DataError on overrun.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  template <typename T>
  void get_array(std::span<T> out) {
    std::memcpy(out.data(), take(out.size_bytes()), out.size_bytes());
  }

  std::string_view get_bytes(std::size_t n) { return {take(n), n}; }

  std::string get_string() {
    auto n = get<std::uint32_t>();
    return std::string(get_bytes(n));
  }

  template <typename Derived>
  void get_matrix_rowmajor(Eigen::DenseBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(get<float>());
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const char* take(std::size_t n) {
    if (n > remaining()) throw DataError(what_ + ": truncated file");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
std::uint32_t crc32(std::string_view bytes);

}  // namespace sseds::detail
