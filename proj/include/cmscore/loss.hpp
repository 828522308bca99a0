#pragma once

#include "cmscore/tensor.hpp"

#include <algorithm>

namespace cmscore {

/// s(x, y) = x . y for unit-norm embeddings.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar cosine_score(const Eigen::MatrixBase<DerivedX>& x,
                                       const Eigen::MatrixBase<DerivedY>& y) {
  return x.dot(y);
}

template <typename Scalar>
struct RankingLoss {
  Scalar loss = 0;
  MatrixX<Scalar> grad_x;  // w.r.t. the image embeddings
  MatrixX<Scalar> grad_y;  // w.r.t. the audio embeddings
  Index terms = 0;         // hinge terms evaluated
  Index active = 0;        // hinge terms with positive value
};

/// Pairwise ranking hinge loss over a batch of row-aligned matching pairs:
///   sum_j sum_{k != j} max(0, margin - s(x_j, y_j) + s(x_j, y_k))
/// Each image anchor x_j is contrasted with every non-matching audio row. With
/// `symmetric`, audio anchors contrasted with non-matching image rows are
/// added as well.
template <typename Scalar>
RankingLoss<Scalar> ranking_loss(const MatrixX<Scalar>& x, const MatrixX<Scalar>& y, Scalar margin,
                                 bool symmetric = false) {
  require_shape(x.rows() == y.rows() && x.cols() == y.cols(),
                "ranking_loss: image batch " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                    " vs audio batch " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
  require_shape(x.rows() >= 2, "ranking_loss: a batch needs at least two pairs");
  const Index n = x.rows();
  // Scores are plain per-entry dot products so identical rows score
  // identically, independent of any blocked-GEMM summation order.
  MatrixX<Scalar> s(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < n; ++k) s(j, k) = x.row(j).dot(y.row(k));
  }
  RankingLoss<Scalar> out;
  out.grad_x = MatrixX<Scalar>::Zero(n, x.cols());
  out.grad_y = MatrixX<Scalar>::Zero(n, y.cols());

  // Image anchors: term(j, k) = margin - (s_jj - s_jk).
  MatrixX<Scalar> active = MatrixX<Scalar>::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < n; ++k) {
      if (k == j) continue;
      const Scalar term = margin - (s(j, j) - s(j, k));
      ++out.terms;
      if (term > Scalar(0)) {
        out.loss += term;
        active(j, k) = Scalar(1);
        ++out.active;
      }
    }
  }
  VectorX<Scalar> counts = active.rowwise().sum();
  out.grad_x.noalias() += active * y;
  out.grad_x -= counts.asDiagonal() * y;
  out.grad_y.noalias() += active.transpose() * x;
  out.grad_y -= counts.asDiagonal() * x;

  if (symmetric) {
    // Audio anchors: term(j, k) = margin - (s_jj - s_kj).
    MatrixX<Scalar> back = MatrixX<Scalar>::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index k = 0; k < n; ++k) {
        if (k == j) continue;
        const Scalar term = margin - (s(j, j) - s(k, j));
        ++out.terms;
        if (term > Scalar(0)) {
          out.loss += term;
          back(j, k) = Scalar(1);
          ++out.active;
        }
      }
    }
    VectorX<Scalar> back_counts = back.rowwise().sum();
    out.grad_y.noalias() += back * x;
    out.grad_y -= back_counts.asDiagonal() * x;
    out.grad_x.noalias() += back.transpose() * y;
    out.grad_x -= back_counts.asDiagonal() * y;
  }
  return out;
}

}  // namespace cmscore
