// SPDX-License-Identifier: Apache-2.0

#include "dst/io.hpp"

#include <cstdio>
#include <sstream>

namespace dst::io {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  auto is = open_in(path, true);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string hash_file(const std::filesystem::path& path) { return hex64(fnv1a(read_text(path))); }

}  // namespace dst::io
