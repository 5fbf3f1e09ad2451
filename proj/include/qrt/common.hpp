#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrt {

// Machine-parsable error codes. The CLI prints them as a single
// "E_<CODE>: detail" line on stderr and exits nonzero.
enum class ErrorCode {
  usage,
  config,
  io,
  format,
  validate,
  numeric,
  runtime,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(detail), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool ok, ErrorCode code, const std::string& detail) {
  if (!ok) fail(code, detail);
}

using FloatVec = std::vector<float>;

inline bool all_finite(std::span<const float> x) {
  for (float v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

// FNV-1a, used for config digests in run reports.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

}  // namespace qrt
