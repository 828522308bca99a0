#pragma once

#include "cmscore/checkpoint.hpp"
#include "cmscore/loss.hpp"
#include "cmscore/optim.hpp"
#include "cmscore/synthdata.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cmscore {

struct TrainConfig {
  double kappa = 1.0;
  double margin = 0.2;
  int batch_size = 100;
  double learning_rate = 0.002;
  int patience = 30;
  int halvings = 10;
  double improvement_tol = 1e-5;
  AdamConfig adam;
  bool symmetric = false;
  int max_epochs = 0;  // 0: run until the schedule is exhausted
  /// Training batches used to re-estimate batch-norm population statistics
  /// at the end of every epoch; 0 keeps the per-step moving averages.
  int bn_refresh_batches = 5;
  std::uint64_t seed = 1;
  // Sheet augmentation, sampled per pair and per epoch.
  bool image_scaling = true;
  bool dy_system = true;
  bool dx_note = true;

  bool any_image_augmentation() const { return image_scaling || dy_system || dx_note; }
  ScheduleConfig schedule() const { return {learning_rate, patience, halvings, improvement_tol}; }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool improved = false;  // new best validation loss
};

/// Batches in one epoch over `pairs` pairs; a trailing singleton joins the
/// previous batch.
int batches_per_epoch(std::size_t pairs, int batch_size);

/// Mean per-anchor ranking loss of a batch of matching rows, for reporting.
double mean_ranking_loss(const MatrixX<float>& x, const MatrixX<float>& y, const TrainConfig& cfg);

/// Single-threaded optimizer loop over the training correspondences. Every
/// random draw is derived from (seed, epoch, step), so a run resumed from a
/// checkpoint continues exactly as the uninterrupted run would.
class Trainer {
 public:
  Trainer(const Dataset& data, const TrainConfig& cfg);
  Trainer(const Dataset& data, const TrainConfig& cfg, const ModelCheckpoint& resume);

  /// One optimizer step on the next batch of the current epoch; returns the
  /// mean per-anchor loss of that batch before the update.
  double step();
  /// Finishes the current epoch, validates and advances the schedule.
  EpochRecord run_epoch();
  /// Runs epochs until the schedule is exhausted or max_epochs is reached.
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  bool finished() const;
  double validation_loss() const;
  /// Loss of the batch the next step() would use, without updating anything.
  double peek_next_loss() const;

  int epoch() const { return epoch_; }
  int steps_per_epoch() const { return static_cast<int>(batches_.size()); }
  double lr() const { return schedule_.lr(); }
  const Model<float>& model() const { return model_; }
  const std::vector<EpochRecord>& log() const { return log_; }

  /// Current model plus optimizer/schedule state, for resuming.
  ModelCheckpoint checkpoint() const;
  /// Model with the best validation loss seen so far (current model if no
  /// epoch finished yet).
  ModelCheckpoint best() const;

 private:
  void plan_epoch();
  void refresh_batchnorm_statistics();
  void assemble(std::size_t batch, Tensor4<float>& images, Tensor4<float>& excerpts) const;

  const Dataset& data_;
  TrainConfig cfg_;
  Model<float> model_;
  AdamState<float> adam_;
  PlateauSchedule schedule_;
  int epoch_ = 0;            // completed epochs
  std::size_t next_batch_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
  std::vector<std::vector<std::size_t>> val_batches_;
  double epoch_loss_sum_ = 0.0;
  int epoch_loss_count_ = 0;
  std::vector<EpochRecord> log_;
  ModelCheckpoint best_;
  bool has_best_ = false;
};

struct TrainResult {
  ModelCheckpoint best;
  ModelCheckpoint last;
  std::vector<EpochRecord> log;
};

TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// CSV with header epoch,train_loss,val_loss,lr.
std::string metrics_csv(const std::vector<EpochRecord>& log);

}  // namespace cmscore
