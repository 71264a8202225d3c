#include "gmpvi/gaussian.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gmpvi/error.hpp"

namespace gmpvi {

CholeskyFactor::CholeskyFactor(Eigen::MatrixXd raw) : raw_(std::move(raw)) {
  if (raw_.rows() != raw_.cols()) throw config_error("Cholesky factor must be square");
  raw_.triangularView<Eigen::StrictlyUpper>().setZero();
}

CholeskyFactor CholeskyFactor::identity(int dim) {
  return CholeskyFactor(Eigen::MatrixXd::Zero(dim, dim));
}

CholeskyFactor CholeskyFactor::from_lower(const Eigen::MatrixXd& lower) {
  Eigen::MatrixXd raw = lower;
  for (Eigen::Index j = 0; j < raw.rows(); ++j) {
    if (!(lower(j, j) > 0.0)) throw numerical_error("Cholesky factor needs a positive diagonal");
    raw(j, j) = std::log(lower(j, j));
  }
  return CholeskyFactor(std::move(raw));
}

CholeskyFactor CholeskyFactor::diagonal(const Eigen::VectorXd& variances) {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(variances.size(), variances.size());
  for (Eigen::Index j = 0; j < variances.size(); ++j) raw(j, j) = 0.5 * std::log(variances(j));
  return CholeskyFactor(std::move(raw));
}

Eigen::MatrixXd CholeskyFactor::lower() const {
  Eigen::MatrixXd c = raw_;
  for (Eigen::Index j = 0; j < c.rows(); ++j) c(j, j) = std::exp(raw_(j, j));
  return c;
}

Eigen::MatrixXd CholeskyFactor::covariance() const {
  const Eigen::MatrixXd c = lower();
  return c * c.transpose();
}

bool CholeskyFactor::is_diagonal() const {
  return raw_.triangularView<Eigen::StrictlyLower>().toDenseMatrix().isZero(0.0);
}

Eigen::MatrixXd chol_to_cov(const CholeskyFactor& factor) { return factor.covariance(); }

CholeskyFactor cov_to_chol(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw numerical_error("covariance must be square");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (!cov.isApprox(cov.transpose(), 1e-12) &&
      (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw numerical_error("covariance is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw numerical_error("covariance is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  for (Eigen::Index j = 0; j < l.rows(); ++j)
    if (!(l(j, j) > 0.0) || !std::isfinite(l(j, j)))
      throw numerical_error("covariance is not positive definite");
  return CholeskyFactor::from_lower(l);
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const CholeskyFactor& factor) {
  if (x.size() != mean.size() || x.size() != factor.dim())
    throw config_error("mvn_logpdf: dimension mismatch");
  const Eigen::MatrixXd c = factor.lower();
  const Eigen::VectorXd z = c.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + factor.log_det() + z.squaredNorm());
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& cov) {
  return mvn_logpdf(x, mean, cov_to_chol(cov));
}

Eigen::MatrixXd sigma_gradient_to_raw(const Eigen::MatrixXd& G, const CholeskyFactor& factor,
                                      bool diagonal_only) {
  const Eigen::MatrixXd c = factor.lower();
  Eigen::MatrixXd d = (G + G.transpose()) * c;
  d.triangularView<Eigen::StrictlyUpper>().setZero();
  if (diagonal_only) d = Eigen::MatrixXd(d.diagonal().asDiagonal());
  for (Eigen::Index j = 0; j < d.rows(); ++j) d(j, j) *= c(j, j);
  return d;
}

Eigen::VectorXd vech(const Eigen::MatrixXd& m) {
  const Eigen::Index p = m.rows();
  Eigen::VectorXd v(p * (p + 1) / 2);
  Eigen::Index t = 0;
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = j; i < p; ++i) v(t++) = m(i, j);
  return v;
}

Eigen::MatrixXd unvech(const Eigen::VectorXd& v, int dim) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Index t = 0;
  for (int j = 0; j < dim; ++j)
    for (int i = j; i < dim; ++i) m(i, j) = v(t++);
  return m;
}

double log_sum_exp(const double* v, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(v[i] - mx);
  return mx + std::log(acc);
}

}  // namespace gmpvi
