#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "udac/tensor.hpp"

namespace udac {

/// File format violations carry a kind so callers can tell corruption from
/// version drift from shape errors.
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, Version, Truncated, Checksum, Dimension };
  FormatError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

/// CRC-32 (IEEE 802.3, reflected), byte-at-a-time table.
class Crc32 {
 public:
  Crc32() { init_table(); }
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i)
      crc_ = table_[(crc_ ^ p[i]) & 0xff] ^ (crc_ >> 8);
  }
  std::uint32_t value() const { return crc_ ^ 0xffffffffu; }

 private:
  void init_table() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table_[i] = c;
    }
  }
  std::uint32_t table_[256];
  std::uint32_t crc_ = 0xffffffffu;
};

inline std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
  Crc32 c;
  c.update(bytes.data(), bytes.size());
  return c.value();
}

/// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void bytes(const void* p, std::size_t n) { raw(p, n); }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    raw(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  std::uint32_t u32() { return read_as<std::uint32_t>(); }
  std::uint64_t u64() { return read_as<std::uint64_t>(); }
  double f64() { return read_as<double>(); }
  std::string str() {
    std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  template <typename T>
  T read_as() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) {
    if (pos_ + n > n_)
      throw FormatError(FormatError::Kind::Truncated,
                        "truncated file: wanted " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_));
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<unsigned char>& bytes);

}  // namespace udac
