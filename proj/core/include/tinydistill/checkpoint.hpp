#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "tinydistill/distill.hpp"
#include "tinydistill/transformer.hpp"

namespace tinydistill {

// Binary model snapshot. Layout, all integers little-endian:
//   magic "TWCK" | u16 version | u32 header length | header JSON bytes
//   | u32 tensor count | per tensor: u16 name length, name bytes,
//     u8 dtype tag (0 = 32-bit float), u8 ndim, u32 dims..., u64 payload offset
//   | payload: 32-bit floats
// The header JSON carries the model shape and the run metadata below, so a
// file is loadable with no side information. Round-trips are bitwise exact.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string stage;  // which pipeline stage wrote the file
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

struct LoadedCheckpoint {
  TransformerLM<float> model;
  CheckpointMeta meta;
  std::optional<AdamState<float>> opt;  // present when the file carries optimizer moments
};

// Models with an attached (unmerged) adapter are rejected: merge first.
// Passing `opt` persists Adam moments beside the weights for exact resume.
void save_checkpoint(const std::string& path, const TransformerLM<float>& model,
                     const CheckpointMeta& meta, const AdamState<float>* opt = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

// FNV-1a over a tensor's payload bytes; used for copy-verification records.
std::uint64_t tensor_content_hash(const Tensor<float>& tensor);

}  // namespace tinydistill
