#pragma once

// Forward and backward passes for the fixed layer set of the embedding
// network: 3x3/1x1 convolution, batch normalization, ELU, 2x2 max pooling,
// global average pooling and row-wise L2 normalization.

#include "cmscore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace cmscore {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Convolution (stride 1, "same" padding: 3x3 pad 1 or 1x1 pad 0)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ConvParams {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  MatrixX<Scalar> weight;  // out_channels x (in_channels * kernel * kernel)
  VectorX<Scalar> bias;    // out_channels

  ConvParams() = default;
  ConvParams(Index in, Index out, Index k)
      : in_channels(in),
        out_channels(out),
        kernel(k),
        weight(MatrixX<Scalar>::Zero(out, in * k * k)),
        bias(VectorX<Scalar>::Zero(out)) {
    require_shape(k == 1 || k == 3, "conv2d: kernel must be 1 or 3, got " + std::to_string(k));
  }

  Index patch_size() const { return in_channels * kernel * kernel; }
};

template <typename Scalar>
struct ConvGrads {
  Tensor4<Scalar> input;
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;
};

namespace detail {

inline void check_conv(const Shape4& x, Index in_channels, Index weight_cols, Index patch) {
  require_shape(x.channels == in_channels,
                "conv2d: input has " + std::to_string(x.channels) + " channels (" + x.str() +
                    "), weights expect " + std::to_string(in_channels));
  require_shape(weight_cols == patch, "conv2d: weight matrix has " + std::to_string(weight_cols) +
                                          " columns, expected " + std::to_string(patch));
}

// Unfolds one sample (HW x C, column per channel) into a HW x (C*9) patch
// matrix for a 3x3 kernel with zero padding 1. Column ci*9 + ky*3 + kx holds
// the input shifted by (ky-1, kx-1).
template <typename Scalar>
void im2col3x3(const Scalar* src, Index channels, Index height, Index width, Scalar* cols) {
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* in = src + c * plane;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* out = cols + (c * 9 + ky * 3 + kx) * plane;
        const Index dy = ky - 1;
        const Index dx = kx - 1;
        const Index x_lo = std::max<Index>(0, -dx);
        const Index x_hi = std::min<Index>(width, width - dx);
        for (Index y = 0; y < height; ++y) {
          Scalar* row = out + y * width;
          const Index sy = y + dy;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, Scalar(0));
            continue;
          }
          const Scalar* srow = in + sy * width + dx;
          for (Index x = 0; x < x_lo; ++x) row[x] = Scalar(0);
          std::copy(srow + x_lo, srow + x_hi, row + x_lo);
          for (Index x = x_hi; x < width; ++x) row[x] = Scalar(0);
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor4<Scalar> conv2d(const Tensor4<Scalar>& x, const ConvParams<Scalar>& p) {
  detail::check_conv(x.shape(), p.in_channels, p.weight.cols(), p.patch_size());
  auto y = Tensor4<Scalar>::uninitialized({x.batch(), p.out_channels, x.height(), x.width()});
  const MatrixX<Scalar> wt = p.weight.transpose();
  if (p.kernel == 1) {
    for (Index n = 0; n < x.batch(); ++n) {
      y.sample(n).noalias() = x.sample(n) * wt;
      y.sample(n).rowwise() += p.bias.transpose();
    }
    return y;
  }
  MatrixX<Scalar> cols(x.plane_size(), p.patch_size());
  for (Index n = 0; n < x.batch(); ++n) {
    detail::im2col3x3(x.data().data() + n * x.sample_size(), x.channels(), x.height(), x.width(),
                      cols.data());
    y.sample(n).noalias() = cols * wt;
    y.sample(n).rowwise() += p.bias.transpose();
  }
  return y;
}

/// Gradients of conv2d. The input gradient of a 3x3 layer is itself a 3x3
/// convolution of dy with the spatially flipped, channel-transposed kernel.
/// Pass need_input = false to skip it (first layer of a pathway).
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor4<Scalar>& x, const ConvParams<Scalar>& p,
                                  const Tensor4<Scalar>& dy, bool need_input = true) {
  detail::check_conv(x.shape(), p.in_channels, p.weight.cols(), p.patch_size());
  require_shape(dy.shape() == Shape4{x.batch(), p.out_channels, x.height(), x.width()},
                "conv2d_backward: output gradient " + dy.shape().str() + " does not match");
  ConvGrads<Scalar> g{need_input ? Tensor4<Scalar>::uninitialized(x.shape()) : Tensor4<Scalar>(),
                      MatrixX<Scalar>::Zero(p.out_channels, p.patch_size()),
                      VectorX<Scalar>::Zero(p.out_channels)};
  for (Index n = 0; n < x.batch(); ++n) g.bias += dy.sample(n).colwise().sum().transpose();
  if (p.kernel == 1) {
    for (Index n = 0; n < x.batch(); ++n) {
      g.weight.noalias() += dy.sample(n).transpose() * x.sample(n);
      if (need_input) g.input.sample(n).noalias() = dy.sample(n) * p.weight;
    }
    return g;
  }
  MatrixX<Scalar> cols(x.plane_size(), p.patch_size());
  for (Index n = 0; n < x.batch(); ++n) {
    detail::im2col3x3(x.data().data() + n * x.sample_size(), x.channels(), x.height(), x.width(),
                      cols.data());
    g.weight.noalias() += dy.sample(n).transpose() * cols;
  }
  if (!need_input) return g;
  // flipped(co*9 + k, ci) = weight(co, ci*9 + 8 - k)
  MatrixX<Scalar> flipped(p.out_channels * 9, p.in_channels);
  for (Index co = 0; co < p.out_channels; ++co) {
    for (Index ci = 0; ci < p.in_channels; ++ci) {
      for (Index k = 0; k < 9; ++k) flipped(co * 9 + k, ci) = p.weight(co, ci * 9 + 8 - k);
    }
  }
  MatrixX<Scalar> dcols(x.plane_size(), p.out_channels * 9);
  for (Index n = 0; n < x.batch(); ++n) {
    detail::im2col3x3(dy.data().data() + n * dy.sample_size(), dy.channels(), dy.height(),
                      dy.width(), dcols.data());
    g.input.sample(n).noalias() = dcols * flipped;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNormParams {
  VectorX<Scalar> gamma;
  VectorX<Scalar> beta;
  VectorX<Scalar> running_mean;
  VectorX<Scalar> running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.9);

  BatchNormParams() = default;
  explicit BatchNormParams(Index channels)
      : gamma(VectorX<Scalar>::Ones(channels)),
        beta(VectorX<Scalar>::Zero(channels)),
        running_mean(VectorX<Scalar>::Zero(channels)),
        running_var(VectorX<Scalar>::Ones(channels)) {}

  Index channels() const { return gamma.size(); }
};

/// Per-channel batch statistics kept from a training-mode forward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor4<Scalar> normalized;
  VectorX<Scalar> mean;
  VectorX<Scalar> var;  // biased
  VectorX<Scalar> inv_std;
  Index count = 0;  // elements per channel
};

template <typename Scalar>
struct BatchNormGrads {
  Tensor4<Scalar> input;
  VectorX<Scalar> gamma;
  VectorX<Scalar> beta;
};

namespace detail {
inline void check_bn(const Shape4& x, Index channels) {
  require_shape(x.channels == channels, "batchnorm: input " + x.str() + " has " +
                                            std::to_string(x.channels) + " channels, params have " +
                                            std::to_string(channels));
}
}  // namespace detail

template <typename Scalar>
Tensor4<Scalar> batchnorm_eval(const Tensor4<Scalar>& x, const BatchNormParams<Scalar>& p) {
  detail::check_bn(x.shape(), p.channels());
  const VectorX<Scalar> scale =
      p.gamma.array() / (p.running_var.array() + p.eps).sqrt();
  const VectorX<Scalar> shift = p.beta.array() - p.running_mean.array() * scale.array();
  auto y = Tensor4<Scalar>::uninitialized(x.shape());
  for (Index n = 0; n < x.batch(); ++n) {
    y.sample(n).array() =
        (x.sample(n).array().rowwise() * scale.transpose().array()).rowwise() +
        shift.transpose().array();
  }
  return y;
}

/// Normalizes with the statistics of the batch itself. Running statistics are
/// not touched; see update_running_stats.
template <typename Scalar>
Tensor4<Scalar> batchnorm_train(const Tensor4<Scalar>& x, const BatchNormParams<Scalar>& p,
                                BatchNormCache<Scalar>& cache) {
  detail::check_bn(x.shape(), p.channels());
  const Index count = x.batch() * x.plane_size();
  if (count < 2) {
    throw std::invalid_argument("batchnorm: training mode needs more than one element per channel (" +
                                x.shape().str() + ")");
  }
  const Index channels = x.channels();
  cache.count = count;
  cache.mean = VectorX<Scalar>::Zero(channels);
  for (Index n = 0; n < x.batch(); ++n) cache.mean += x.sample(n).colwise().sum().transpose();
  cache.mean /= Scalar(count);
  cache.var = VectorX<Scalar>::Zero(channels);
  for (Index n = 0; n < x.batch(); ++n) {
    cache.var += (x.sample(n).rowwise() - cache.mean.transpose()).colwise().squaredNorm().transpose();
  }
  cache.var /= Scalar(count);
  cache.inv_std = (cache.var.array() + p.eps).rsqrt();

  cache.normalized = Tensor4<Scalar>::uninitialized(x.shape());
  auto y = Tensor4<Scalar>::uninitialized(x.shape());
  for (Index n = 0; n < x.batch(); ++n) {
    auto xhat = cache.normalized.sample(n);
    xhat.array() = (x.sample(n).rowwise() - cache.mean.transpose()).array().rowwise() *
                   cache.inv_std.transpose().array();
    y.sample(n).array() = (xhat.array().rowwise() * p.gamma.transpose().array()).rowwise() +
                          p.beta.transpose().array();
  }
  return y;
}

/// running = momentum * running + (1 - momentum) * batch, with the unbiased
/// batch variance.
template <typename Scalar>
void update_running_stats(BatchNormParams<Scalar>& p, const BatchNormCache<Scalar>& cache) {
  const Scalar keep = p.momentum;
  const Scalar unbias = Scalar(cache.count) / Scalar(cache.count - 1);
  p.running_mean = keep * p.running_mean + (Scalar(1) - keep) * cache.mean;
  p.running_var = keep * p.running_var + (Scalar(1) - keep) * unbias * cache.var;
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BatchNormParams<Scalar>& p,
                                          const BatchNormCache<Scalar>& cache,
                                          const Tensor4<Scalar>& dy) {
  require_shape(dy.shape() == cache.normalized.shape(),
                "batchnorm_backward: gradient " + dy.shape().str() + " vs cached " +
                    cache.normalized.shape().str());
  const Index channels = p.channels();
  BatchNormGrads<Scalar> g{Tensor4<Scalar>::uninitialized(dy.shape()), VectorX<Scalar>::Zero(channels),
                           VectorX<Scalar>::Zero(channels)};
  for (Index n = 0; n < dy.batch(); ++n) {
    g.beta += dy.sample(n).colwise().sum().transpose();
    g.gamma += dy.sample(n).cwiseProduct(cache.normalized.sample(n)).colwise().sum().transpose();
  }
  // dx = gamma * inv_std / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
  const Scalar m = Scalar(cache.count);
  const VectorX<Scalar> coeff = p.gamma.cwiseProduct(cache.inv_std) / m;
  for (Index n = 0; n < dy.batch(); ++n) {
    auto dx = g.input.sample(n);
    dx.array() = ((m * dy.sample(n)).rowwise() - g.beta.transpose()).array() -
                 cache.normalized.sample(n).array().rowwise() * g.gamma.transpose().array();
    dx.array().rowwise() *= coeff.transpose().array();
  }
  return g;
}

// ---------------------------------------------------------------------------
// ELU (alpha = 1)
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor4<Scalar> elu(const Tensor4<Scalar>& x) {
  auto y = Tensor4<Scalar>::uninitialized(x.shape());
  const auto a = x.data().array();
  y.data().array() = a.max(Scalar(0)) + (a.min(Scalar(0)).exp() - Scalar(1));
  return y;
}

/// Uses the forward output: d/dx elu = 1 for x > 0, else elu(x) + 1.
template <typename Scalar>
Tensor4<Scalar> elu_backward(const Tensor4<Scalar>& y, const Tensor4<Scalar>& dy) {
  require_shape(y.shape() == dy.shape(), "elu_backward: shape mismatch " + y.shape().str() +
                                              " vs " + dy.shape().str());
  auto dx = Tensor4<Scalar>::uninitialized(y.shape());
  dx.data().array() = dy.data().array() * (y.data().array().min(Scalar(0)) + Scalar(1));
  return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2, odd trailing row/column dropped
// ---------------------------------------------------------------------------

struct MaxPoolCache {
  Shape4 input_shape;
  std::vector<std::int32_t> argmax;  // flat in-plane index per output element
};

template <typename Scalar>
Tensor4<Scalar> maxpool2x2(const Tensor4<Scalar>& x, MaxPoolCache* cache = nullptr) {
  require_shape(x.height() >= 2 && x.width() >= 2,
                "maxpool2x2: input " + x.shape().str() + " smaller than the 2x2 window");
  const Index oh = x.height() / 2;
  const Index ow = x.width() / 2;
  auto y = Tensor4<Scalar>::uninitialized({x.batch(), x.channels(), oh, ow});
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax.assign(static_cast<std::size_t>(y.size()), 0);
  }
  const Index w = x.width();
  std::size_t out = 0;
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const Scalar* in = x.data().data() + (n * x.channels() + c) * x.plane_size();
      Scalar* dst = y.data().data() + (n * y.channels() + c) * y.plane_size();
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox, ++out) {
          Index best = (2 * oy) * w + 2 * ox;
          const Index candidates[3] = {best + 1, best + w, best + w + 1};
          for (Index k : candidates) {
            if (in[k] > in[best]) best = k;
          }
          dst[oy * ow + ox] = in[best];
          if (cache) cache->argmax[out] = static_cast<std::int32_t>(best);
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor4<Scalar> maxpool2x2_backward(const MaxPoolCache& cache, const Tensor4<Scalar>& dy) {
  const Shape4& in = cache.input_shape;
  require_shape(dy.shape() == Shape4{in.batch, in.channels, in.height / 2, in.width / 2},
                "maxpool2x2_backward: gradient " + dy.shape().str() + " does not match input " +
                    in.str());
  Tensor4<Scalar> dx(in);
  const Index in_plane = in.height * in.width;
  const Index out_plane = dy.plane_size();
  for (Index p = 0; p < in.batch * in.channels; ++p) {
    Scalar* dst = dx.data().data() + p * in_plane;
    const Scalar* src = dy.data().data() + p * out_plane;
    const std::int32_t* arg = cache.argmax.data() + p * out_plane;
    for (Index k = 0; k < out_plane; ++k) dst[arg[k]] += src[k];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling -> batch x channels
// ---------------------------------------------------------------------------

template <typename Scalar>
MatrixX<Scalar> global_average_pool(const Tensor4<Scalar>& x) {
  MatrixX<Scalar> out(x.batch(), x.channels());
  for (Index n = 0; n < x.batch(); ++n) out.row(n) = x.sample(n).colwise().mean();
  return out;
}

template <typename Scalar>
Tensor4<Scalar> global_average_pool_backward(const Shape4& input_shape, const MatrixX<Scalar>& dy) {
  require_shape(dy.rows() == input_shape.batch && dy.cols() == input_shape.channels,
                "global_average_pool_backward: gradient is " + std::to_string(dy.rows()) + "x" +
                    std::to_string(dy.cols()) + ", input " + input_shape.str());
  Tensor4<Scalar> dx(input_shape);
  const Scalar inv = Scalar(1) / Scalar(input_shape.height * input_shape.width);
  for (Index n = 0; n < input_shape.batch; ++n) {
    dx.sample(n).rowwise() = dy.row(n) * inv;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Row-wise L2 normalization
// ---------------------------------------------------------------------------

template <typename Derived>
MatrixX<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const Scalar norm = v.row(r).norm();
    if (!(norm > Scalar(0))) {
      throw std::invalid_argument("l2_normalize: row " + std::to_string(r) + " has zero norm");
    }
    out.row(r) = v.row(r) / norm;
  }
  return out;
}

/// Gradient w.r.t. the raw rows v given the normalized output u = v / |v|.
template <typename Scalar>
MatrixX<Scalar> l2_normalize_rows_backward(const MatrixX<Scalar>& v, const MatrixX<Scalar>& u,
                                           const MatrixX<Scalar>& du) {
  MatrixX<Scalar> dv(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const Scalar norm = v.row(r).norm();
    dv.row(r) = (du.row(r) - u.row(r) * u.row(r).dot(du.row(r))) / norm;
  }
  return dv;
}

}  // namespace cmscore
