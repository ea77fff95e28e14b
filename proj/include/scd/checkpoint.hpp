#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scd/config.hpp"
#include "scd/model.hpp"
#include "scd/trainer.hpp"

namespace scd {

// File layout: 8-byte magic "SCDCKPT1", u32 format version, u64 header byte
// count, JSON header, then every array as little-endian float32, row-major,
// in manifest order. Parameters come first, then the Adam moments as
// "adam.m/<name>" and "adam.v/<name>".

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ArrayEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;  // in floats from the payload start
  std::uint64_t count = 0;
};

struct CheckpointMeta {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;  // epochs completed
  std::uint64_t optimizer_step = 0;
  std::vector<ArrayEntry> arrays;
};

struct Checkpoint {
  CheckpointMeta meta;
  Model model;
  OptimizerState optimizer;
};

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train,
                     std::size_t epoch, const OptimizerState& optimizer);

// Reads only the header. Error codes: checkpoint_version, checkpoint_truncated,
// checkpoint_format.
CheckpointMeta inspect_checkpoint(const std::string& path);

// Rebuilds the model from the stored config and fills every array. Throws
// checkpoint_shape (naming the array) if a stored shape disagrees with the
// model layout; nothing is returned on any error.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scd
