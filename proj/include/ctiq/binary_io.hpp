#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctiq/error.hpp"

namespace ctiq::binio {

/// Little-endian byte sink, independent of host byte order.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::vector<char>& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<char> buf_;
};

/// Bounds-checked reader; every overrun raises FormatError naming `what`.
class Reader {
 public:
  explicit Reader(std::span<const char> data) : data_(data) {}

  std::string bytes(std::size_t n, std::string_view what) {
    need(n, what);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(std::string_view what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32(std::string_view what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(std::string_view what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(std::string_view what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::vector<double> f64s(std::size_t n, std::string_view what) {
    if (n > remaining() / 8) need(n * 8, what);
    std::vector<double> out(n);
    for (double& v : out) v = f64(what);
    return out;
  }
  std::string str(std::string_view what, std::size_t max_len = 1 << 16) {
    const std::uint32_t n = u32(what);
    if (n > max_len) throw FormatError(std::string(what) + ": implausible string length " + std::to_string(n));
    return bytes(n, what);
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw FormatError("truncated input while reading " + std::string(what) + " (need " + std::to_string(n) +
                        " bytes, " + std::to_string(remaining()) + " left)");
    }
  }
  std::span<const char> data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
/// Write atomically-enough for our purposes: to a sibling temp file, then rename.
void write_file(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace ctiq::binio
