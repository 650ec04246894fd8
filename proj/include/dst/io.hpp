// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers and content hashing shared by the artifact formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dst/errors.hpp"

namespace dst::io {

static_assert(std::endian::native == std::endian::little, "artifact formats assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("unexpected end of binary file");
  return v;
}

inline double read_f64(std::istream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DataError("unexpected end of binary file");
  return v;
}

inline void expect_magic(std::istream& is, std::string_view magic, const std::filesystem::path& path) {
  char buf[4] = {};
  if (!is.read(buf, 4) || std::string_view(buf, 4) != magic)
    throw DataError("bad magic in " + path.string() + ", expected " + std::string(magic));
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw DataError("cannot open " + path.string());
  return is;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);
/// FNV-1a of a file's bytes as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace dst::io
