#pragma once

#include <filesystem>
#include <optional>

#include "brickseq/tokenize.hpp"
#include "brickseq/transformer.hpp"

namespace brickseq {

// Layout (little-endian):
//   "BPLM" | u16 version | u32 header_bytes | JSON header | f32 tensor data
// The header holds {"config", "tensors": [{name, shape, offset, bytes}], "vocabulary"};
// tensor offsets are relative to the start of the data section.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  LMParams params;
  std::optional<Vocabulary> vocab;
};

void save_checkpoint(const std::filesystem::path& path, const LMParams& params,
                     const Vocabulary* vocab = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // throws CheckpointError

}  // namespace brickseq
