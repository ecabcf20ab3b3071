#pragma once

// Little-endian byte packing for the GFCK / GFDS containers, with bounds
// checks that surface the failing byte offset.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

#include "gradfaith/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized containers assume a little-endian host");

namespace gradfaith::detail {

inline std::uint32_t crc32_of(const char* data, std::size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, nullptr, 0), reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(len)));
}

struct ByteWriter {
  std::string buf;

  void bytes(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  // Append the checksum of everything written so far.
  void crc_trailer() { u32(crc32_of(buf.data(), buf.size())); }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  explicit ByteReader(const std::string& b) : buf(b) {}

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw FormatError(std::string("truncated file while reading ") + what,
                        static_cast<long long>(pos));
  }
  template <typename T>
  T raw(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::uint8_t u8(const char* what) { return raw<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return raw<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return raw<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return raw<std::uint64_t>(what); }
  double f64(const char* what) { return raw<double>(what); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }

  // Validate the 4-byte CRC trailer against everything before it.
  void check_crc_trailer(const char* what) {
    if (buf.size() < 4 || pos > buf.size() - 4)
      throw FormatError(std::string(what) + ": missing checksum trailer",
                        static_cast<long long>(pos));
    const std::size_t body = buf.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + body, 4);
    const std::uint32_t actual = crc32_of(buf.data(), body);
    if (stored != actual)
      throw FormatError(std::string(what) + ": checksum mismatch",
                        static_cast<long long>(body));
  }
};

}  // namespace gradfaith::detail
