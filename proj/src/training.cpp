#include "cmscore/training.hpp"

#include "cmscore/rng.hpp"

#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cmscore {

namespace {

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < order.size(); lo += size) {
    const std::size_t hi = std::min(order.size(), lo + size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  // the loss needs a contrastive sample: fold a trailing singleton into the
  // previous batch
  if (out.size() > 1 && out.back().size() < 2) {
    auto tail = out.back();
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  return order;
}

}  // namespace

int batches_per_epoch(std::size_t pairs, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  const auto b = static_cast<std::size_t>(batch_size);
  std::size_t n = (pairs + b - 1) / b;
  if (n > 1 && pairs % b == 1) --n;
  return static_cast<int>(n);
}

double mean_ranking_loss(const MatrixX<float>& x, const MatrixX<float>& y, const TrainConfig& cfg) {
  const auto r = ranking_loss<float>(x, y, static_cast<float>(cfg.margin), cfg.symmetric);
  return static_cast<double>(r.loss) / static_cast<double>(x.rows());
}

Trainer::Trainer(const Dataset& data, const TrainConfig& cfg)
    : data_(data), cfg_(cfg), schedule_(cfg.schedule()) {
  if (data_.train.pairs.size() < 2) {
    throw std::invalid_argument("training needs at least two correspondence pairs, got " +
                                std::to_string(data_.train.pairs.size()));
  }
  if (cfg_.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (cfg_.margin < 0) throw std::invalid_argument("margin must be non-negative");
  model_ = make_model<float>(cfg_.kappa, derive_seed(cfg_.seed, "init"));
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  if (data_.val.pairs.size() >= 2) {
    auto order = iota_order(data_.val.pairs.size());
    Rng rng(derive_seed(cfg_.seed, "val"));
    rng.shuffle(order);
    val_batches_ = chunk(order, batch);
  }
  plan_epoch();
}

Trainer::Trainer(const Dataset& data, const TrainConfig& cfg, const ModelCheckpoint& resume) : Trainer(data, cfg) {
  if (!(resume.model.image.spec == model_.image.spec) || !(resume.model.audio.spec == model_.audio.spec)) {
    throw std::invalid_argument("checkpoint geometry does not match the configured channel scale");
  }
  model_ = resume.model;
  epoch_ = static_cast<int>(resume.epoch);
  plan_epoch();
  if (resume.training) {
    const auto& t = *resume.training;
    adam_ = t.adam;
    schedule_.restore(t.best_val, t.stale, t.halvings);
    if (t.step_in_epoch > batches_.size()) throw std::invalid_argument("checkpoint step is past the epoch end");
    next_batch_ = t.step_in_epoch;
  }
}

void Trainer::plan_epoch() {
  auto order = iota_order(data_.train.pairs.size());
  Rng rng(derive_seed(cfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch_)));
  rng.shuffle(order);
  batches_ = chunk(order, static_cast<std::size_t>(cfg_.batch_size));
  next_batch_ = 0;
  epoch_loss_sum_ = 0.0;
  epoch_loss_count_ = 0;
}

void Trainer::assemble(std::size_t batch, Tensor4<float>& images, Tensor4<float>& excerpts) const {
  const auto& ids = batches_.at(batch);
  const auto n = static_cast<Index>(ids.size());
  images = Tensor4<float>::uninitialized({n, 1, kSnippetHeight, kSnippetWidth});
  excerpts = Tensor4<float>::uninitialized({n, 1, kSpectrogramBins, kExcerptFrames});
  Rng rng(derive_seed(cfg_.seed, "augment", (static_cast<std::uint64_t>(epoch_) << 24) + batch));
  for (Index i = 0; i < n; ++i) {
    const auto& pair = data_.train.pairs[ids[static_cast<std::size_t>(i)]];
    if (cfg_.any_image_augmentation()) {
      AugmentParams aug;
      if (cfg_.image_scaling) aug.scale = rng.uniform(0.95, 1.05);
      if (cfg_.dy_system) aug.dy = static_cast<int>(rng.integer(-5, 5));
      if (cfg_.dx_note) aug.dx = static_cast<int>(rng.integer(-5, 5));
      images.plane(i, 0) = cut_sheet_snippet(data_.train.piece(pair.piece_id).staff, pair.x_pixel, aug);
    } else {
      images.plane(i, 0) = data_.train.snippets[static_cast<std::size_t>(pair.snippet)];
    }
    excerpts.plane(i, 0) = data_.train.excerpts[ids[static_cast<std::size_t>(i)]];
  }
}

double Trainer::step() {
  if (next_batch_ >= batches_.size()) throw std::logic_error("epoch already complete; call run_epoch()");
  Tensor4<float> images;
  Tensor4<float> excerpts;
  assemble(next_batch_, images, excerpts);
  PathwayCache<float> image_cache;
  PathwayCache<float> audio_cache;
  const MatrixX<float> x = pathway_forward(model_.image, images, Mode::kTrain, &image_cache);
  const MatrixX<float> y = pathway_forward(model_.audio, excerpts, Mode::kTrain, &audio_cache);
  update_running_stats(model_.image, image_cache);
  update_running_stats(model_.audio, audio_cache);

  auto loss = ranking_loss<float>(x, y, static_cast<float>(cfg_.margin), cfg_.symmetric);
  const float scale = 1.0F / static_cast<float>(x.rows());
  Model<float> grads;
  grads.image = pathway_backward(model_.image, image_cache, MatrixX<float>(loss.grad_x * scale));
  grads.audio = pathway_backward(model_.audio, audio_cache, MatrixX<float>(loss.grad_y * scale));

  auto params = trainable_arrays(model_);
  const auto grad_arrays = trainable_arrays(grads);
  adam_step<float>(params, grad_arrays, adam_, schedule_.lr(), cfg_.adam);

  ++next_batch_;
  const double mean = static_cast<double>(loss.loss) * static_cast<double>(scale);
  epoch_loss_sum_ += mean;
  ++epoch_loss_count_;
  return mean;
}

double Trainer::peek_next_loss() const {
  if (next_batch_ >= batches_.size()) throw std::logic_error("no pending batch in this epoch");
  Tensor4<float> images;
  Tensor4<float> excerpts;
  assemble(next_batch_, images, excerpts);
  const MatrixX<float> x = pathway_forward(model_.image, images, Mode::kTrain);
  const MatrixX<float> y = pathway_forward(model_.audio, excerpts, Mode::kTrain);
  return mean_ranking_loss(x, y, cfg_);
}

double Trainer::validation_loss() const {
  if (val_batches_.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto& val = data_.val;
  std::vector<Image> snippets;
  for (const auto& p : val.pairs) snippets.push_back(val.snippets[static_cast<std::size_t>(p.snippet)]);
  const MatrixX<float> x = embed_image(model_, stack_images(snippets), Mode::kEval);
  const MatrixX<float> y = embed_audio(model_, stack_spectrograms(val.excerpts), Mode::kEval);
  double total = 0.0;
  for (const auto& batch : val_batches_) {
    MatrixX<float> bx(static_cast<Index>(batch.size()), x.cols());
    MatrixX<float> by(static_cast<Index>(batch.size()), y.cols());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      bx.row(static_cast<Index>(i)) = x.row(static_cast<Index>(batch[i]));
      by.row(static_cast<Index>(i)) = y.row(static_cast<Index>(batch[i]));
    }
    total += mean_ranking_loss(bx, by, cfg_);
  }
  return total / static_cast<double>(val_batches_.size());
}

void Trainer::refresh_batchnorm_statistics() {
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg_.bn_refresh_batches), batches_.size());
  if (count == 0) return;
  auto refresh = [&](PathwayParams<float>& params, const std::vector<Tensor4<float>>& inputs) {
    std::vector<VectorX<float>> mean(params.layers.size());
    std::vector<VectorX<float>> var(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      mean[l] = VectorX<float>::Zero(params.layers[l].bn.channels());
      var[l] = VectorX<float>::Zero(params.layers[l].bn.channels());
    }
    for (const auto& input : inputs) {
      PathwayCache<float> cache;
      pathway_forward(params, input, Mode::kTrain, &cache);
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& bn = cache.layers[l].bn;
        mean[l] += bn.mean;
        var[l] += bn.var * (static_cast<float>(bn.count) / static_cast<float>(bn.count - 1));
      }
    }
    const auto n = static_cast<float>(inputs.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      params.layers[l].bn.running_mean = mean[l] / n;
      params.layers[l].bn.running_var = var[l] / n;
    }
  };
  std::vector<Tensor4<float>> images(count);
  std::vector<Tensor4<float>> excerpts(count);
  for (std::size_t b = 0; b < count; ++b) assemble(b, images[b], excerpts[b]);
  refresh(model_.image, images);
  refresh(model_.audio, excerpts);
}

EpochRecord Trainer::run_epoch() {
  while (next_batch_ < batches_.size()) step();
  refresh_batchnorm_statistics();
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.lr = schedule_.lr();
  rec.train_loss = epoch_loss_count_ > 0 ? epoch_loss_sum_ / epoch_loss_count_ : 0.0;
  // without a validation split the schedule follows the training loss
  rec.val_loss = val_batches_.empty() ? rec.train_loss : validation_loss();
  rec.improved = schedule_.observe(rec.val_loss);
  ++epoch_;
  if (rec.improved || !has_best_) {
    best_ = ModelCheckpoint{model_, static_cast<std::uint32_t>(epoch_), std::nullopt};
    has_best_ = true;
  }
  log_.push_back(rec);
  plan_epoch();
  return rec;
}

void Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!finished()) {
    const auto rec = run_epoch();
    if (on_epoch) on_epoch(rec);
  }
}

bool Trainer::finished() const {
  return schedule_.exhausted() || (cfg_.max_epochs > 0 && epoch_ >= cfg_.max_epochs);
}

ModelCheckpoint Trainer::checkpoint() const {
  TrainingState state;
  state.step_in_epoch = static_cast<std::uint32_t>(next_batch_);
  state.adam = adam_;
  state.best_val = schedule_.best();
  state.stale = schedule_.stale();
  state.halvings = schedule_.halvings();
  return ModelCheckpoint{model_, static_cast<std::uint32_t>(epoch_), std::move(state)};
}

ModelCheckpoint Trainer::best() const {
  if (has_best_) return best_;
  return ModelCheckpoint{model_, static_cast<std::uint32_t>(epoch_), std::nullopt};
}

TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  Trainer trainer(data, cfg);
  trainer.run(on_epoch);
  return {trainer.best(), trainer.checkpoint(), trainer.log()};
}

std::string metrics_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    out << buf;
  }
  return out.str();
}

}  // namespace cmscore
