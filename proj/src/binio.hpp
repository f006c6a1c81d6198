#pragma once

// Little-endian binary helpers with a running CRC32 (zlib), shared by the
// checkpoint and database formats.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afp/error.hpp"

namespace afp::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <class T>
  void put(T v) {
    bytes(&v, sizeof(T));
  }
  void tag(std::string_view magic) { bytes(magic.data(), magic.size()); }
  void str(const std::string& s) {
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) { bytes(v.data(), v.size_bytes()); }

  /// Appends CRC32 of everything written so far and writes the file.
  void commit(const std::filesystem::path& path) {
    put<std::uint32_t>(crc(buf_.data(), buf_.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw InputError("write failed: " + path.string());
  }

  static std::uint32_t crc(const unsigned char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
      c = crc32(c, p, chunk);
      p += chunk;
      n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
  }

 private:
  std::vector<unsigned char> buf_;
};

class BinaryReader {
 public:
  /// Reads the whole file and verifies the trailing CRC32.
  BinaryReader(const std::filesystem::path& path, std::string_view what) : what_(what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + std::string(what) + ": " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), {});
    if (buf_.size() < 4) fail("truncated file");
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + buf_.size() - 4, 4);
    end_ = buf_.size() - 4;
    stored_crc_ = stored;
  }

  /// Checks the magic first so a wrong file type reports as such, then the CRC.
  void expect_magic(std::string_view magic) {
    if (end_ < magic.size() || std::memcmp(buf_.data(), magic.data(), magic.size()) != 0)
      fail("bad magic (expected " + std::string(magic) + ")");
    if (BinaryWriter::crc(buf_.data(), end_) != stored_crc_) fail("checksum mismatch");
    pos_ = magic.size();
  }

  void bytes(void* out, std::size_t n) {
    if (n > end_ - pos_) fail("truncated payload");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    std::string s(get<std::uint16_t>(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  void floats(std::span<float> v) { bytes(v.data(), v.size_bytes()); }
  std::size_t remaining() const { return end_ - pos_; }
  void expect_end() {
    if (pos_ != end_) fail("trailing bytes before checksum");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(what_) + ": " + msg);
  }

 private:
  std::string what_;
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::uint32_t stored_crc_ = 0;
};

}  // namespace afp::detail
