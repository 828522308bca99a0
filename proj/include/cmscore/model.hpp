#pragma once

#include "cmscore/io.hpp"
#include "cmscore/layers.hpp"
#include "cmscore/rng.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace cmscore {

inline constexpr Index kEmbeddingDim = 32;
inline constexpr Index kSnippetHeight = 180;
inline constexpr Index kSnippetWidth = 200;
inline constexpr Index kSpectrogramBins = 92;
inline constexpr Index kExcerptFrames = 42;
inline constexpr std::array<Index, 4> kBlockChannels = {12, 24, 48, 48};

/// One conv layer followed by batch norm, optionally ELU and a 2x2 pool.
struct LayerSpec {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  bool elu = true;
  bool pool_after = false;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Geometry of one pathway: four [2x conv3x3-BN-ELU, maxpool] blocks, then a
/// conv1x1-BN linear head feeding global average pooling.
struct PathwaySpec {
  Index height = 0;
  Index width = 0;
  std::array<Index, 4> block_channels{};
  Index embed_dim = kEmbeddingDim;

  std::vector<LayerSpec> layers() const {
    std::vector<LayerSpec> out;
    Index in = 1;
    for (Index c : block_channels) {
      out.push_back({in, c, 3, true, false});
      out.push_back({c, c, 3, true, true});
      in = c;
    }
    out.push_back({in, embed_dim, 1, false, false});
    return out;
  }

  /// Shape of the map entering global average pooling for a batch of n.
  Shape4 pre_pool_shape(Index n = 1) const {
    Index h = height;
    Index w = width;
    for (std::size_t b = 0; b < block_channels.size(); ++b) {
      h /= 2;
      w /= 2;
    }
    return {n, embed_dim, h, w};
  }

  friend bool operator==(const PathwaySpec&, const PathwaySpec&) = default;
};

/// Scales the block channel counts by kappa (rounded); the embedding width
/// stays 32.
inline std::array<Index, 4> scaled_channels(double kappa) {
  std::array<Index, 4> out{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Index>(std::lround(static_cast<double>(kBlockChannels[i]) * kappa));
    if (out[i] < 1) {
      throw std::invalid_argument("channel scale " + std::to_string(kappa) +
                                  " leaves block " + std::to_string(i) + " without channels");
    }
  }
  return out;
}

/// Image pathway spec (1x180x200) and audio pathway spec (1x92x42).
inline std::pair<PathwaySpec, PathwaySpec> build_pathways(double kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) {
    throw std::invalid_argument("channel scale must lie in (0, 1], got " + std::to_string(kappa));
  }
  const auto channels = scaled_channels(kappa);
  return {PathwaySpec{kSnippetHeight, kSnippetWidth, channels, kEmbeddingDim},
          PathwaySpec{kSpectrogramBins, kExcerptFrames, channels, kEmbeddingDim}};
}

template <typename Scalar>
struct LayerParams {
  ConvParams<Scalar> conv;
  BatchNormParams<Scalar> bn;
};

/// Trainable and running-statistic parameters of one pathway.
template <typename Scalar>
struct PathwayParams {
  PathwaySpec spec;
  std::vector<LayerParams<Scalar>> layers;

  PathwayParams() = default;
  explicit PathwayParams(const PathwaySpec& s) : spec(s) {
    for (const auto& l : s.layers()) {
      layers.push_back({ConvParams<Scalar>(l.in_channels, l.out_channels, l.kernel),
                        BatchNormParams<Scalar>(l.out_channels)});
    }
  }

  /// Trainable arrays in declaration order: per layer conv weight, conv bias,
  /// bn scale, bn shift.
  template <typename F>
  void for_each_trainable(F&& f) {
    for (auto& l : layers) {
      f(l.conv.weight.data(), l.conv.weight.size());
      f(l.conv.bias.data(), l.conv.bias.size());
      f(l.bn.gamma.data(), l.bn.gamma.size());
      f(l.bn.beta.data(), l.bn.beta.size());
    }
  }

  /// Every stored array (trainable plus running statistics) in declaration
  /// order; this is the checkpoint layout.
  template <typename F>
  void for_each_array(F&& f) {
    for (auto& l : layers) {
      f(l.conv.weight.data(), l.conv.weight.size());
      f(l.conv.bias.data(), l.conv.bias.size());
      f(l.bn.gamma.data(), l.bn.gamma.size());
      f(l.bn.beta.data(), l.bn.beta.size());
      f(l.bn.running_mean.data(), l.bn.running_mean.size());
      f(l.bn.running_var.data(), l.bn.running_var.size());
    }
  }
  template <typename F>
  void for_each_array(F&& f) const {
    const_cast<PathwayParams*>(this)->for_each_array(
        [&](Scalar* p, Index n) { f(static_cast<const Scalar*>(p), n); });
  }

  Index trainable_count() {
    Index total = 0;
    for_each_trainable([&](Scalar*, Index n) { total += n; });
    return total;
  }

  template <typename Other>
  PathwayParams<Other> cast() const {
    PathwayParams<Other> out(spec);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      auto& b = out.layers[i];
      b.conv.weight = a.conv.weight.template cast<Other>();
      b.conv.bias = a.conv.bias.template cast<Other>();
      b.bn.gamma = a.bn.gamma.template cast<Other>();
      b.bn.beta = a.bn.beta.template cast<Other>();
      b.bn.running_mean = a.bn.running_mean.template cast<Other>();
      b.bn.running_var = a.bn.running_var.template cast<Other>();
    }
    return out;
  }
};

/// He-style uniform init: weights ~ U(-b, b), b = sqrt(6 / fan_in); bn scale 1,
/// shift 0.
template <typename Scalar>
void initialize(PathwayParams<Scalar>& params, Rng& rng) {
  for (auto& l : params.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.conv.patch_size()));
    for (Index i = 0; i < l.conv.weight.size(); ++i) {
      l.conv.weight.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    l.conv.bias.setZero();
    l.bn.gamma.setOnes();
    l.bn.beta.setZero();
    l.bn.running_mean.setZero();
    l.bn.running_var.setOnes();
  }
}

/// Activations kept from a forward pass for the backward pass.
template <typename Scalar>
struct PathwayCache {
  struct Layer {
    Tensor4<Scalar> input;
    BatchNormCache<Scalar> bn;
    Tensor4<Scalar> activated;  // ELU output, only when the layer has ELU
    MaxPoolCache pool;
  };
  std::vector<Layer> layers;
  Shape4 pre_pool_shape;
  MatrixX<Scalar> raw;         // pooled, pre-normalization embeddings
  MatrixX<Scalar> normalized;  // unit-norm rows
};

/// Runs a pathway over a batch and returns batch x 32 unit-norm embeddings.
/// Train mode normalizes with batch statistics; eval mode with running
/// statistics. Parameters are never modified: after a train-mode pass, call
/// update_running_stats with the filled cache.
template <typename Scalar>
MatrixX<Scalar> pathway_forward(const PathwayParams<Scalar>& params, const Tensor4<Scalar>& input,
                                Mode mode, PathwayCache<Scalar>* cache = nullptr) {
  require_shape(input.channels() == 1 && input.height() == params.spec.height &&
                    input.width() == params.spec.width,
                "pathway input " + input.shape().str() + " does not match expected Nx1x" +
                    std::to_string(params.spec.height) + "x" + std::to_string(params.spec.width));
  const auto specs = params.spec.layers();
  if (cache) cache->layers.assign(specs.size(), {});
  Tensor4<Scalar> x = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& layer = params.layers[i];
    Tensor4<Scalar> y = conv2d(x, layer.conv);
    if (mode == Mode::kTrain) {
      BatchNormCache<Scalar> local;
      y = batchnorm_train(y, layer.bn, cache ? cache->layers[i].bn : local);
    } else {
      y = batchnorm_eval(y, layer.bn);
    }
    if (specs[i].elu) y = elu(y);
    if (cache) {
      cache->layers[i].input = std::move(x);
      if (specs[i].elu) cache->layers[i].activated = y;
    }
    if (specs[i].pool_after) {
      y = maxpool2x2(y, cache ? &cache->layers[i].pool : nullptr);
    }
    x = std::move(y);
  }
  MatrixX<Scalar> raw = global_average_pool(x);
  MatrixX<Scalar> normalized = l2_normalize_rows(raw);
  if (cache) {
    cache->pre_pool_shape = x.shape();
    cache->raw = std::move(raw);
    cache->normalized = normalized;
  }
  return normalized;
}

/// Folds the batch statistics of a train-mode pass into the running
/// statistics of every batch-norm layer.
template <typename Scalar>
void update_running_stats(PathwayParams<Scalar>& params, const PathwayCache<Scalar>& cache) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update_running_stats(params.layers[i].bn, cache.layers[i].bn);
  }
}

/// Backpropagates the gradient w.r.t. the normalized embeddings through a
/// train-mode forward pass. Returns parameter gradients (running statistics
/// zero) and, optionally, the gradient w.r.t. the input.
template <typename Scalar>
PathwayParams<Scalar> pathway_backward(const PathwayParams<Scalar>& params, PathwayCache<Scalar>& cache,
                                       const MatrixX<Scalar>& grad_embedding,
                                       Tensor4<Scalar>* grad_input = nullptr) {
  PathwayParams<Scalar> grads(params.spec);
  for (auto& l : grads.layers) {
    l.bn.running_mean.setZero();
    l.bn.running_var.setZero();
  }
  const auto specs = params.spec.layers();
  MatrixX<Scalar> draw = l2_normalize_rows_backward(cache.raw, cache.normalized, grad_embedding);
  Tensor4<Scalar> dy = global_average_pool_backward(cache.pre_pool_shape, draw);
  for (std::size_t k = specs.size(); k-- > 0;) {
    auto& c = cache.layers[k];
    if (specs[k].pool_after) dy = maxpool2x2_backward(c.pool, dy);
    if (specs[k].elu) {
      dy = elu_backward(c.activated, dy);
      c.activated = Tensor4<Scalar>();
    }
    auto bn = batchnorm_backward(params.layers[k].bn, c.bn, dy);
    c.bn.normalized = Tensor4<Scalar>();
    grads.layers[k].bn.gamma = std::move(bn.gamma);
    grads.layers[k].bn.beta = std::move(bn.beta);
    auto conv = conv2d_backward(c.input, params.layers[k].conv, bn.input, k > 0 || grad_input);
    c.input = Tensor4<Scalar>();
    grads.layers[k].conv.weight = std::move(conv.weight);
    grads.layers[k].conv.bias = std::move(conv.bias);
    dy = std::move(conv.input);
  }
  if (grad_input) *grad_input = std::move(dy);
  return grads;
}

/// Both pathways: f embeds sheet snippets, g embeds spectrogram excerpts.
template <typename Scalar>
struct Model {
  double kappa = 1.0;
  PathwayParams<Scalar> image;
  PathwayParams<Scalar> audio;

  Model() = default;
  explicit Model(double k) : kappa(k) {
    auto [f, g] = build_pathways(k);
    image = PathwayParams<Scalar>(f);
    audio = PathwayParams<Scalar>(g);
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out;
    out.kappa = kappa;
    out.image = image.template cast<Other>();
    out.audio = audio.template cast<Other>();
    return out;
  }
};

/// Fresh model with independent streams for the two pathways.
template <typename Scalar>
Model<Scalar> make_model(double kappa, std::uint64_t seed) {
  Model<Scalar> m(kappa);
  Rng image_rng(derive_seed(seed, "init/image"));
  Rng audio_rng(derive_seed(seed, "init/audio"));
  initialize(m.image, image_rng);
  initialize(m.audio, audio_rng);
  return m;
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> embed_batch(const PathwayParams<Scalar>& params, const Tensor4<Scalar>& input,
                            Mode mode, Index chunk) {
  if (mode == Mode::kTrain || input.batch() <= chunk) return pathway_forward(params, input, mode);
  // Eval mode has no cross-sample coupling: embed fixed-size chunks
  // independently (and possibly concurrently).
  const Index n = input.batch();
  const Index chunks = (n + chunk - 1) / chunk;
  MatrixX<Scalar> out(n, params.spec.embed_dim);
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t k) {
    const Index lo = static_cast<Index>(k) * chunk;
    const Index len = std::min(chunk, n - lo);
    auto part = Tensor4<Scalar>::uninitialized({len, 1, input.height(), input.width()});
    part.data() = input.data().segment(lo * input.sample_size(), len * input.sample_size());
    out.middleRows(lo, len) = pathway_forward(params, part, Mode::kEval);
  });
  return out;
}

}  // namespace detail

/// x = f(i): unit-norm embeddings of a batch of 180x200 sheet snippets.
template <typename Scalar>
MatrixX<Scalar> embed_image(const Model<Scalar>& model, const Tensor4<Scalar>& snippets,
                            Mode mode = Mode::kEval, Index chunk = 32) {
  return detail::embed_batch(model.image, snippets, mode, chunk);
}

/// y = g(a): unit-norm embeddings of a batch of 92x42 spectrogram excerpts.
template <typename Scalar>
MatrixX<Scalar> embed_audio(const Model<Scalar>& model, const Tensor4<Scalar>& excerpts,
                            Mode mode = Mode::kEval, Index chunk = 64) {
  return detail::embed_batch(model.audio, excerpts, mode, chunk);
}

}  // namespace cmscore
