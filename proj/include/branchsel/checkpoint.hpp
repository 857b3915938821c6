#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "branchsel/autodiff.hpp"
#include "branchsel/model.hpp"
#include "branchsel/training.hpp"

namespace branchsel {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  TrainConfig train;
  std::string rng_state;
  std::size_t epochs_done = 0;
  bool pretrained = false;
  std::size_t max_steps = 200;  // decoding bound derived from the training split
};

struct LoadedCheckpoint {
  ModelConfig model;
  nn::ParamStore params;
  CheckpointMeta meta;
};

/// Layout: "BRSL", u32 version, u64 length + JSON header (model config,
/// training config, RNG state, Adam step), u32 array count, then per array a
/// u32-length-prefixed name, u32 rows, u32 cols and rows*cols float32 values
/// for the parameter and both Adam moments. All integers and floats are
/// little-endian.
///
/// Parameters and moments are rounded to float32 in memory first, so the
/// saved model and the one still in memory behave identically.
void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace branchsel
