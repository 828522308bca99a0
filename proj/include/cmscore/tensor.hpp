#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmscore {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when tensor or parameter shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape4 {
  Index batch = 0;
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index size() const { return batch * channels * height * width; }
  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return std::to_string(batch) + "x" + std::to_string(channels) + "x" + std::to_string(height) +
           "x" + std::to_string(width);
  }
};

/// Dense NCHW activation tensor. Each (sample, channel) plane is row-major,
/// so a sample viewed as a column-major (height*width) x channels matrix is
/// contiguous with one channel per column.
template <typename Scalar>
class Tensor4 {
 public:
  using SampleMap = Eigen::Map<MatrixX<Scalar>>;
  using ConstSampleMap = Eigen::Map<const MatrixX<Scalar>>;
  using PlaneMap = Eigen::Map<RowMatrixX<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const RowMatrixX<Scalar>>;

  Tensor4() = default;
  explicit Tensor4(const Shape4& shape, Scalar fill = Scalar(0))
      : shape_(shape), data_(VectorX<Scalar>::Constant(shape.size(), fill)) {}
  Tensor4(Index batch, Index channels, Index height, Index width, Scalar fill = Scalar(0))
      : Tensor4(Shape4{batch, channels, height, width}, fill) {}

  /// Storage left uninitialized; for outputs that are fully overwritten.
  static Tensor4 uninitialized(const Shape4& shape) {
    Tensor4 t;
    t.shape_ = shape;
    t.data_.resize(shape.size());
    return t;
  }

  const Shape4& shape() const { return shape_; }
  Index batch() const { return shape_.batch; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index plane_size() const { return shape_.height * shape_.width; }
  Index sample_size() const { return shape_.channels * plane_size(); }
  Index size() const { return data_.size(); }

  VectorX<Scalar>& data() { return data_; }
  const VectorX<Scalar>& data() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }

  SampleMap sample(Index n) {
    return SampleMap(data_.data() + n * sample_size(), plane_size(), shape_.channels);
  }
  ConstSampleMap sample(Index n) const {
    return ConstSampleMap(data_.data() + n * sample_size(), plane_size(), shape_.channels);
  }

  PlaneMap plane(Index n, Index c) {
    return PlaneMap(data_.data() + (n * shape_.channels + c) * plane_size(), shape_.height,
                    shape_.width);
  }
  ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(data_.data() + (n * shape_.channels + c) * plane_size(), shape_.height,
                         shape_.width);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(shape_);
    out.data() = data_.template cast<Other>();
    return out;
  }

 private:
  Shape4 shape_;
  VectorX<Scalar> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace cmscore
