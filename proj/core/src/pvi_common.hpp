#pragma once

// Helpers shared by the GLM, hierarchical and latent-GP objectives.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "gmpvi/mixture.hpp"

namespace gmpvi::detail {

/// n x K logits (0, Z eta_2, ..., Z eta_K).
inline Eigen::MatrixXd gating_logits(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd a(Z.rows(), eta.rows() + 1);
  a.col(0).setZero();
  if (eta.rows() > 0) a.rightCols(eta.rows()) = Z * eta.transpose();
  return a;
}

/// Gradient through averaged weights wbar_k = mean_i W(i, k): given
/// h = dF/dwbar, adds coef * W(i,l) (h_l - sum_k W(i,k) h_k) to dlogits.
inline void add_average_weight_gradient(const Eigen::MatrixXd& W, const Eigen::VectorXd& h,
                                        double coef, Eigen::MatrixXd& dlogits) {
  const Eigen::VectorXd wh = W * h;
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index l = 0; l < W.cols(); ++l)
      dlogits(i, l) += coef * W(i, l) * (h(l) - wh(i));
}

/// Gating-vector gradient from logit gradient; row k-1 for component k.
inline Eigen::MatrixXd eta_gradient(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& dlogits) {
  const Eigen::Index K = dlogits.cols();
  if (K <= 1) return Eigen::MatrixXd::Zero(0, Z.cols());
  return dlogits.rightCols(K - 1).transpose() * Z;
}

inline std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> r(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = i;
  return r;
}

}  // namespace gmpvi::detail
