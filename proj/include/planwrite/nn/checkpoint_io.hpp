#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "planwrite/nn/tensor.hpp"

namespace planwrite::nn {

inline constexpr char kCheckpointMagic[4] = {'P', 'A', 'W', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, all integers little-endian:
///   "PAWC" | u32 version
///   | u32 token count | per token: u32 byte length, UTF-8 bytes
///   | u32 byte length | metadata text (key=value lines)
///   | records until EOF: u32 name length, UTF-8 name, u32 rank,
///     rank x u64 dims, prod(dims) x f32 values
struct CheckpointPayload {
  std::vector<std::string> vocabulary;
  std::string metadata;
  ParamSet params;
};

std::string encode_checkpoint(const CheckpointPayload& payload);
/// Throws DataError on bad magic, unsupported version or truncation.
CheckpointPayload decode_checkpoint(std::string_view bytes);

}  // namespace planwrite::nn
