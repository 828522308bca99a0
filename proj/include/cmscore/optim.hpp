#pragma once

#include "cmscore/model.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace cmscore {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  std::vector<VectorX<Scalar>> first;   // one moment vector per parameter array
  std::vector<VectorX<Scalar>> second;
};

template <typename Scalar>
using ParamMap = Eigen::Map<VectorX<Scalar>>;

/// Bias-corrected Adam update over a list of parameter arrays. Moments are
/// lazily sized on the first call.
template <typename Scalar>
void adam_step(std::span<ParamMap<Scalar>> params, std::span<const ParamMap<Scalar>> grads,
               AdamState<Scalar>& state, double lr, const AdamConfig& cfg = {}) {
  require_shape(params.size() == grads.size(), "adam_step: parameter/gradient list lengths differ");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.push_back(VectorX<Scalar>::Zero(p.size()));
      state.second.push_back(VectorX<Scalar>::Zero(p.size()));
    }
  }
  require_shape(state.first.size() == params.size(), "adam_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto rate = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(params[i].size() == grads[i].size() && state.first[i].size() == params[i].size(),
                  "adam_step: array " + std::to_string(i) + " shape mismatch");
    auto& m = state.first[i];
    auto& v = state.second[i];
    m = b1 * m + (Scalar(1) - b1) * grads[i];
    v = b2 * v + (Scalar(1) - b2) * grads[i].cwiseAbs2();
    params[i].array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

/// Maps over every trainable array of both pathways (image first).
template <typename Scalar>
std::vector<ParamMap<Scalar>> trainable_arrays(Model<Scalar>& model) {
  std::vector<ParamMap<Scalar>> out;
  auto push = [&](Scalar* p, Index n) { out.emplace_back(p, n); };
  model.image.for_each_trainable(push);
  model.audio.for_each_trainable(push);
  return out;
}

// ---------------------------------------------------------------------------
// Plateau learning-rate schedule
// ---------------------------------------------------------------------------

struct ScheduleConfig {
  double initial_lr = 0.002;
  int patience = 30;      // epochs without improvement before halving
  int max_halvings = 10;  // training stops once this many halvings happened
  double min_improvement = 1e-5;
};

/// Halves the learning rate whenever the best validation loss has not
/// improved for `patience` consecutive epochs.
class PlateauSchedule {
 public:
  PlateauSchedule() = default;
  explicit PlateauSchedule(const ScheduleConfig& cfg) : cfg_(cfg) {}

  /// Records one epoch's validation loss; returns true when it is a new best.
  bool observe(double val_loss) {
    if (val_loss < best_ - cfg_.min_improvement) {
      best_ = val_loss;
      stale_ = 0;
      return true;
    }
    if (++stale_ >= cfg_.patience && !exhausted()) {
      ++halvings_;
      stale_ = 0;
    }
    return false;
  }

  double lr() const { return cfg_.initial_lr / std::ldexp(1.0, halvings_); }
  bool exhausted() const { return halvings_ >= cfg_.max_halvings; }

  double best() const { return best_; }
  int stale() const { return stale_; }
  int halvings() const { return halvings_; }
  const ScheduleConfig& config() const { return cfg_; }

  void restore(double best, int stale, int halvings) {
    best_ = best;
    stale_ = stale;
    halvings_ = halvings;
  }

 private:
  ScheduleConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
  int halvings_ = 0;
};

/// Learning rate in effect after replaying a validation-loss history.
inline double lr_schedule(std::span<const double> history, const ScheduleConfig& cfg = {}) {
  PlateauSchedule s(cfg);
  for (double v : history) s.observe(v);
  return s.lr();
}

}  // namespace cmscore
