#pragma once

// Binary checkpoint: model, both optimisers and the config in one file.
//
// Layout (little-endian):
//   8 bytes   magic "SELGANCK"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header {version, config, iteration, optimizer steps,
//             tensors: [{name, shape, offset, count}]}
//   payload   float32 values; offsets count floats from the payload start

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "selgan/trainer.hpp"

namespace selgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t count = 0;
};

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  TrainConfig config;
  std::int64_t iteration = 0;
  std::int64_t generator_steps = 0;
  std::int64_t discriminator_steps = 0;
  std::vector<CheckpointTensor> tensors;
};

/// Writes to a sibling temporary file and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);

/// Parses magic, version and JSON header only. FormatError on any mismatch.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Builds a fresh state from the stored config and fills every tensor.
TrainState load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing state whose config produces the same tensor set.
/// Everything is read and validated before `state` is touched.
void restore_checkpoint(const std::filesystem::path& path, TrainState& state);

}  // namespace selgan
