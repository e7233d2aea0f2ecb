#pragma once

#include <filesystem>

#include "spangrad/model.hpp"
#include "spangrad/model_config.hpp"

namespace spangrad {

// Binary checkpoint layout (all integers little-endian):
//   "SPGRAD01"                 8-byte magic
//   u32 version                currently 1
//   u64 n, n bytes             JSON-encoded ModelConfig
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u64 rows, u64 cols,
//               rows * cols f64 values in row-major order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelState state;
};

void save_checkpoint(const std::filesystem::path& path,
                     const ModelConfig& config, const ModelState& state);

// Rejects bad magic, unknown versions, truncation and tensor names or shapes
// that disagree with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace spangrad
