#pragma once

#include <string>
#include <vector>

#include "qrt/model.hpp"

namespace qrt::model {

// On-disk layout: magic "QRT1", u32 little-endian header length, JSON
// header, raw payload. The header carries the arch, the scheme (with any
// learned PACT bounds), resolved activation params per quantizer site,
// and the tensor table: name, shape, storage kind (real32, packed8,
// packed4, packed2), quantization params, byte offset and length into
// the payload. Packed payloads use the PackedTensor byte layout.
struct Checkpoint {
  std::string kind;  // "rnnt" | "lm_ext" | "lm_src"
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

Checkpoint to_checkpoint(const RnntModel& m);
Checkpoint to_checkpoint(const LmModel& m);

RnntModel rnnt_from_checkpoint(const Checkpoint& c);
LmModel lm_from_checkpoint(const Checkpoint& c);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

SizeReport size_report(const Checkpoint& c);

}  // namespace qrt::model
