#include "qrt/common.hpp"

#include <cstdio>

namespace qrt {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::usage: return "E_USAGE";
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::format: return "E_FORMAT";
    case ErrorCode::validate: return "E_VALIDATE";
    case ErrorCode::numeric: return "E_NUMERIC";
    case ErrorCode::runtime: return "E_RUNTIME";
  }
  return "E_RUNTIME";
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace qrt
