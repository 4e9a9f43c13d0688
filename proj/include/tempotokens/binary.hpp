#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tempotokens/errors.hpp"

namespace tempo::binary {

// Little-endian byte assembly, independent of host byte order.
class Writer {
public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void bytes(std::span<const std::uint8_t> s) {
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> &buffer() { return buf_; }
  const std::vector<std::uint8_t> &buffer() const { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
public:
  Reader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated (need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ", have " +
                        std::to_string(remaining()) + ")");
    }
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void skip(std::size_t n) { take(n); }

  void expect_magic(std::string_view magic) {
    auto s = take(magic.size());
    if (std::memcmp(s.data(), magic.data(), magic.size()) != 0) {
      throw FormatError(what_ + ": bad magic, expected \"" +
                        std::string(magic) + "\"");
    }
  }

  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    return static_cast<std::uint32_t>(s[0]) |
           (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) |
           (static_cast<std::uint32_t>(s[3]) << 24);
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  float f32() { return std::bit_cast<float>(u32()); }

private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> data(size);
  if (size > 0 &&
      !in.read(reinterpret_cast<char *>(data.data()),
               static_cast<std::streamsize>(size))) {
    throw FormatError("failed reading " + path.string());
  }
  return data;
}

inline void write_file(const std::filesystem::path &path,
                       std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char *>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw Error("failed writing " + path.string());
  }
}

// Checked narrowing for header fields.
inline std::uint32_t to_u32(std::size_t v, const char *what) {
  if (v > UINT32_MAX) {
    throw ValidationError(std::string(what) + " exceeds 32-bit range");
  }
  return static_cast<std::uint32_t>(v);
}

} // namespace tempo::binary
