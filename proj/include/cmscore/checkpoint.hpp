#pragma once

#include "cmscore/model.hpp"
#include "cmscore/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace cmscore {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Optimizer and schedule state needed to continue training exactly.
struct TrainingState {
  std::uint32_t step_in_epoch = 0;
  AdamState<float> adam;
  double best_val = 0.0;
  int stale = 0;
  int halvings = 0;
};

struct ModelCheckpoint {
  Model<float> model;
  std::uint32_t epoch = 0;  // completed epochs
  std::optional<TrainingState> training;
};

/// Binary layout (little-endian): magic "CMSCKPT\0", u32 version, u32 epoch,
/// f64 channel scale, per pathway (image, audio) u32 height, width, four block
/// widths and embedding width, then every parameter array in declaration
/// order as u32 count + f32 values; finally u8 training-state flag and, if
/// set, the optimizer moments and schedule counters.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

bool bitwise_equal(const Model<float>& a, const Model<float>& b);

}  // namespace cmscore
