#pragma once

#include <cstdint>
#include <string>

#include "hvat/model.hpp"

namespace hvat {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Binary format, little-endian throughout: magic "HVAT", format version u32,
/// length-prefixed UTF-8 config JSON, entry count u32, then per parameter:
/// name length u32 + name + rank u32 + dims u64[] + float32 payload
/// (row-major). Bit-exact at float32 by construction.
std::string checkpoint_bytes(Seq2SeqModel<float>& model);

void save_checkpoint(Seq2SeqModel<float>& model, const std::string& path);

/// Rebuilds the model from the config stored in the file, then overwrites
/// every parameter from the payload. The file's parameter set must match the
/// enumeration exactly; each failure mode carries a distinct error kind.
Seq2SeqModel<float> load_checkpoint(const std::string& path);

/// Same, but the caller's config drives the build; a file whose parameter
/// set does not match it (e.g. a different variant) is rejected.
Seq2SeqModel<float> load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace hvat
