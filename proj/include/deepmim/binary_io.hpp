// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "deepmim/errors.hpp"

namespace deepmim {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

}  // namespace detail

/// Little-endian writer over an ofstream.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = detail::to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

  void floats(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(data[i]);
    }
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("write to " + path_ + " failed");
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Little-endian reader; every short read throws IoError naming the offset.
class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return detail::to_little(v);
  }

  void bytes(void* data, std::size_t n) {
    const auto at = offset();
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw IoError(path_ + ": truncated at byte " + std::to_string(at));
  }

  void floats(float* data, std::size_t n) {
    bytes(data, n * sizeof(float));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < n; ++i) data[i] = detail::to_little(data[i]);
  }

  void seek(std::uint64_t pos) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(pos));
    if (!in_) throw IoError(path_ + ": cannot seek to byte " + std::to_string(pos));
  }

  std::uint64_t offset() { return static_cast<std::uint64_t>(in_.tellg()); }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace deepmim
