#pragma once

#include "cmscore/synthdata.hpp"
#include "cmscore/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmscore {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key = value run configuration. Lines starting with '#' are comments.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  std::uint64_t seed = 1;

  // model and optimizer
  double kappa = 1.0;
  double margin = 0.2;
  int batch_size = 100;
  double learning_rate = 0.002;
  int patience = 30;
  int halvings = 10;
  int max_epochs = 0;
  bool symmetric_loss = false;
  double improvement_tol = 1e-5;

  // augmentation
  bool image_scaling = true;
  bool dy_system = true;
  bool dx_note = true;
  bool multi_font = true;
  bool tempo_var = true;

  // synthetic corpus
  int train_pieces = 5;
  int val_pieces = 1;
  int test_pieces = 3;
  int notes_per_piece = 40;
  int pitch_range = 12;

  // evaluation
  int hop_img = 50;
  int hop_aud = 10;
  double reference_width = 835.0;
  int votes_per_query = 25;

  // ablation harness
  std::vector<std::string> ablate_rows = {"none", "full"};
  int ablate_seeds = 3;
  /// Optimizer steps per ablation run; 0 trains every row for max_epochs.
  int ablate_steps = 0;

  static std::vector<std::string> keys();
};

RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment; unknown keys and bad values throw.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Every key in canonical order; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

/// Applies the `--augment none|full` preset.
void apply_augment_preset(RunConfig& cfg, const std::string& preset);

TrainConfig train_config(const RunConfig& cfg);
DatasetConfig dataset_config(const RunConfig& cfg);

}  // namespace cmscore
