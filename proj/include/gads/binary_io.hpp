#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "gads/error.hpp"

namespace gads::io {

/// Little-endian writer over an ofstream. Byte order is explicit so files are
/// identical across hosts.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open for writing: " + path.string());
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_.string());
  }

  template <typename T>
    requires std::is_integral_v<T>
  void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    std::array<unsigned char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFFu);
    bytes(buf.data(), buf.size());
  }

  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  void put_f32s(std::span<const float> values) {
    std::vector<unsigned char> buf(values.size() * 4);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const auto u = std::bit_cast<std::uint32_t>(values[k]);
      for (std::size_t i = 0; i < 4; ++i) buf[k * 4 + i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFFu);
    }
    bytes(buf.data(), buf.size());
  }

  void put_f64s(std::span<const double> values) {
    for (double v : values) put_f64(v);
  }

  void put_string16(const std::string& s) {
    if (s.size() > 0xFFFF) throw ValidationError("string longer than 65535 bytes: " + s.substr(0, 32) + "...");
    put(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("close failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Little-endian reader over an in-memory buffer. Any read past the end raises
/// CorruptFileError.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t size() const { return data_.size(); }

  std::span<const unsigned char> bytes(std::size_t n) {
    need(n);
    auto out = std::span<const unsigned char>(data_).subspan(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
    requires std::is_integral_v<T>
  T get() {
    using U = std::make_unsigned_t<T>;
    auto b = bytes(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return static_cast<T>(u);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  void get_f32s(std::vector<float>& out, std::size_t n) {
    auto b = bytes(n * 4);
    out.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t u = 0;
      for (std::size_t i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[k * 4 + i]) << (8 * i);
      out[k] = std::bit_cast<float>(u);
    }
  }

  void get_f64s(std::vector<double>& out, std::size_t n) {
    out.resize(n);
    for (auto& v : out) v = get_f64();
  }

  std::string get_string16() {
    const auto n = get<std::uint16_t>();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }

  bool match_magic(const char (&magic)[8]) {
    if (remaining() < 8) return false;
    return std::memcmp(data_.data() + pos_, magic, 8) == 0 ? (pos_ += 8, true) : false;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw CorruptFileError("unexpected end of file in " + path_.string() + " at byte " + std::to_string(pos_));
    }
  }

  std::filesystem::path path_;
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

}  // namespace gads::io
