#pragma once

#include <Eigen/Core>
#include <cmath>

namespace gmpvi {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Lower-triangular Cholesky factor stored with a log-transformed diagonal,
/// so every stored entry is unconstrained. Sigma = C C^T with
/// C_jj = exp(raw_jj) and C_ij = raw_ij for i > j.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  /// Entries above the diagonal are ignored and zeroed.
  explicit CholeskyFactor(Eigen::MatrixXd raw);

  static CholeskyFactor identity(int dim);
  /// From a factor with positive diagonal (not log-transformed).
  static CholeskyFactor from_lower(const Eigen::MatrixXd& lower);
  static CholeskyFactor diagonal(const Eigen::VectorXd& variances);

  int dim() const { return static_cast<int>(raw_.rows()); }
  const Eigen::MatrixXd& raw() const { return raw_; }
  Eigen::MatrixXd lower() const;
  Eigen::MatrixXd covariance() const;
  double log_det() const { return 2.0 * raw_.diagonal().sum(); }
  bool is_diagonal() const;

 private:
  Eigen::MatrixXd raw_;
};

Eigen::MatrixXd chol_to_cov(const CholeskyFactor& factor);

/// Throws a numerical error when `cov` is not symmetric positive definite.
CholeskyFactor cov_to_chol(const Eigen::MatrixXd& cov);

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const CholeskyFactor& factor);
/// Dense SPD covariance; factorised internally.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& cov);

inline double normal_logpdf(double y, double mean, double var) {
  const double r = y - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

/// Gradient of a scalar F with respect to the raw factor, given G with
/// dF = trace(G dSigma) for symmetric G. Returns a lower-triangular matrix;
/// with `diagonal_only` the off-diagonal part is dropped.
Eigen::MatrixXd sigma_gradient_to_raw(const Eigen::MatrixXd& G, const CholeskyFactor& factor,
                                      bool diagonal_only = false);

/// Half-vectorisation (column-major lower triangle) and its inverse.
Eigen::VectorXd vech(const Eigen::MatrixXd& m);
Eigen::MatrixXd unvech(const Eigen::VectorXd& v, int dim);

/// log(sum(exp(v))) guarded against empty or all -inf input.
double log_sum_exp(const double* v, int n);

}  // namespace gmpvi
