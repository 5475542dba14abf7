#ifndef DMREG_BINARY_IO_HPP
#define DMREG_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dmreg/core.hpp"

namespace dmreg::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

/// Little-endian writer over an ofstream. Throws IoError on failure.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    bytes(&value, sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    bytes(values.data(), values.size_bytes());
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("close failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Little-endian reader. Short reads raise TruncatedFileError.
class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw TruncatedFileError("truncated file: " + path_);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    bytes(&value, sizeof(T));
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> values) {
    bytes(values.data(), values.size_bytes());
  }

  /// Reads a 4-byte tag: 3-char family prefix plus a version character.
  /// A matching prefix with another trailing byte is a version mismatch.
  void expect_magic(const char (&magic)[5]) {
    char tag[4];
    in_.read(tag, 4);
    if (in_.gcount() == 0) throw BadMagicError("empty file: " + path_);
    if (in_.gcount() != 4) throw TruncatedFileError("truncated magic: " + path_);
    if (std::memcmp(tag, magic, 3) != 0) throw BadMagicError("bad magic in " + path_);
    if (tag[3] != magic[3]) {
      throw UnsupportedVersionError(std::string("unsupported format version '") + tag[3] + "' in " + path_);
    }
  }

  /// True when every byte has been consumed.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace dmreg::detail

#endif  // DMREG_BINARY_IO_HPP
