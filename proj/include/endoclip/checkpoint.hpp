#pragma once

// Binary checkpoint, little-endian:
//   "CKPT" u32 version
//   u32 tensor count, then per tensor: u32-prefixed name, u32 rank,
//       rank x u64 dims, row-major f64 payload
//   u64-prefixed JSON blob {config, vocabulary, epoch}
//   optimizer: u64 step, u32 count, then per entry: u32-prefixed name,
//       u64 rows, u64 cols, m payload, v payload

#include "endoclip/model.hpp"

#include <filesystem>

namespace endoclip {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  MultimodalModel model;
  AdamWState optimizer;
  int epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const MultimodalModel& model,
                     const AdamWState& optimizer, int epoch);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace endoclip
