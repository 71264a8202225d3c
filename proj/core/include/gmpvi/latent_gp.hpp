#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <filesystem>
#include <vector>

#include "gmpvi/optimizer.hpp"

namespace gmpvi {

/// Squared-exponential covariance s * exp(-|x - x'|^2 / (2 l^2)); the
/// jitter is added to the diagonal of inducing-point Gram matrices.
struct KernelSpec {
  double length_scale = 0.3;
  double signal_var = 1.0;
  double jitter = 1e-8;

  void validate() const;
  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
};

/// Rows of A against rows of B.
Eigen::MatrixXd kernel_matrix(const KernelSpec& k, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Conditional-prior algebra f | f_Z ~ N(A f_Z, C).
struct GpProjection {
  Eigen::MatrixXd A;  // K(X, Z) K(Z, Z)^{-1}
  Eigen::MatrixXd C;  // K(X, X) - A K(Z, X)

  static GpProjection compute(const KernelSpec& k, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z);
};

/// Mixture over inducing values with diagonal covariances, plus one noise
/// variance per component.
struct InducingPosterior {
  Eigen::MatrixXd Z;
  MixturePosterior mixture;
  Eigen::VectorXd noise;
};

/// Per-component marginal of f at X: means A mu_k, covariances C + A Sigma_k A'.
struct GpMarginal {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};
GpMarginal gp_marginal(const InducingPosterior& post, const KernelSpec& k, const Eigen::MatrixXd& X);

/// Gating input (1, x').
Eigen::VectorXd gp_gating_row(const Eigen::VectorXd& x);

/// Univariate Gaussian mixture for y at one input.
struct GpPredictive {
  Eigen::VectorXd weights;
  Eigen::VectorXd means;
  Eigen::VectorXd vars;  // latent variance plus component noise

  double log_density(double y) const;
  double density(double y) const;
  double mean() const;
  double variance() const;
  double cdf(double y) const;
  double quantile(double level) const;
};

GpPredictive gp_predictive(const InducingPosterior& post, const KernelSpec& k, const Eigen::VectorXd& x);
double gp_predictive_density(const InducingPosterior& post, const KernelSpec& k, const Eigen::VectorXd& x,
                             double y);

/// Lloyd's algorithm with k-means++ seeding; returns m centres.
Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& X, int m, std::uint64_t seed, int iterations = 100);

struct GpConfig {
  KernelSpec kernel;
  /// Number of inducing points; 0 places one at every training input.
  int inducing = 0;
  /// Initial component noise; 0 takes it from a one-component pre-fit.
  double init_noise = 0.0;
  int prefit_steps = 2000;
  ObjectiveConfig objective;
};

/// Gaussian-likelihood latent GP. Inducing means are stored whitened,
/// mu_k = L nu_k with L the Cholesky factor of K(Z, Z). Extras layout:
/// [log sigma_1^2 .. log sigma_K^2].
class GpProblem final : public PviProblem {
 public:
  GpProblem(Eigen::MatrixXd X, Eigen::VectorXd y, Eigen::MatrixXd Z, KernelSpec kernel, ObjectiveConfig cfg,
            double init_noise = 1.0, InitConfig init = {});

  MixtureShape mixture_shape(int components) const override;
  Eigen::Index extra_size(int components) const override { return components; }
  Eigen::Index observation_count() const override { return y_.size(); }
  double beta() const override { return cfg_.beta; }
  Eigen::VectorXd initial_parameters(int components, Rng& rng) const override;
  ObjectiveValue evaluate(const Eigen::VectorXd& params, int components, Eigen::VectorXd* grad,
                          std::span<const Eigen::Index> batch = {}) const override;
  Eigen::MatrixXd training_weights(const Eigen::VectorXd& params, int components) const override;
  Eigen::VectorXd select_components(const Eigen::VectorXd& params, int components, std::span<const int> keep,
                                    bool reanchor) const override;
  /// Mixture with un-whitened means.
  MixturePosterior mixture(const Eigen::VectorXd& params, int components) const override;

  InducingPosterior posterior(const Eigen::VectorXd& params, int components) const;

  /// WAIC at the training data: draws (component, inducing values) from the
  /// averaged posterior, with f_i | inducing values integrated out.
  double waic(const Eigen::VectorXd& params, int components, int M, std::uint64_t seed) const;

  const Eigen::MatrixXd& inducing() const { return Z_; }
  const KernelSpec& kernel() const { return kernel_; }
  const Eigen::MatrixXd& projection() const { return A_; }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd Z_;
  KernelSpec kernel_;
  ObjectiveConfig cfg_;
  double init_noise_;
  InitConfig init_;
  Eigen::MatrixXd L_;      // chol K(Z, Z)
  Eigen::MatrixXd A_;      // n x m
  Eigen::MatrixXd A2_;     // elementwise square of A
  Eigen::VectorXd c_diag_; // diag C
  Eigen::VectorXd kinv_diag_;
  double log_det_kzz_ = 0.0;
  Eigen::MatrixXd gate_;
};

struct GpFit {
  InducingPosterior posterior;
  FitResult fit;
  double init_noise = 0.0;
};

/// Inducing inputs for a configuration: the training inputs when
/// cfg.inducing is 0 (or >= n), k-means centres otherwise.
Eigen::MatrixXd gp_inducing_points(const Eigen::MatrixXd& X, const GpConfig& cfg, std::uint64_t seed);

/// cfg.init_noise when positive; otherwise the residual variance of a
/// one-component pre-fit.
double gp_initial_noise(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                        const GpConfig& cfg, const FitConfig& fit_cfg);

/// X holds raw covariates (no intercept column); inputs are expected standardized.
GpFit gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpConfig& cfg, const FitConfig& fit_cfg);

/// Rows (x, q01, q05, q25, q50, q75, q95, q99) for one-dimensional inputs.
std::vector<std::vector<double>> gp_quantile_rows(const InducingPosterior& post, const KernelSpec& k,
                                                  const Eigen::VectorXd& grid);

}  // namespace gmpvi
