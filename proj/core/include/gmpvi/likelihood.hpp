#pragma once

#include <Eigen/Core>
#include <string>

#include "gmpvi/dataset.hpp"
#include "gmpvi/mixture.hpp"
#include "gmpvi/quadrature.hpp"

namespace gmpvi {

/// Zero-mean Gaussian prior on theta: either tau^2 I or a general SPD Omega.
struct PriorSpec {
  enum class Kind { isotropic, gaussian };

  Kind kind = Kind::isotropic;
  double variance = 1.0;     // tau^2 for isotropic priors
  Eigen::MatrixXd covariance;  // Omega for general priors

  static PriorSpec isotropic(double sd);
  static PriorSpec gaussian(Eigen::MatrixXd omega);
  static PriorSpec diagonal(const Eigen::VectorXd& variances);
};

/// Expected log prior under N(mean, cov) and its gradient; `d_cov` is the
/// symmetric G with d value = trace(G dSigma).
struct PriorExpectation {
  double value = 0.0;
  Eigen::VectorXd d_mean;
  Eigen::MatrixXd d_cov;
};

double expected_log_prior(const PriorSpec& prior, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov);
PriorExpectation expected_log_prior_gradient(const PriorSpec& prior, const Eigen::VectorXd& mean,
                                             const Eigen::MatrixXd& cov);

enum class Family { gaussian_fixed, gaussian_unknown_variance, logistic, poisson };

/// Sampling model for y given the linear predictor. For
/// gaussian_unknown_variance theta = (beta, log sigma^2), so its dimension
/// is one more than the number of design columns.
struct LikelihoodModel {
  Family family = Family::gaussian_fixed;
  double noise_variance = 1.0;

  static LikelihoodModel gaussian(double sigma2);
  static LikelihoodModel gaussian_unknown_variance();
  static LikelihoodModel logistic();
  static LikelihoodModel poisson();
  static LikelihoodModel from_name(const std::string& name, double sigma2 = 1.0);

  std::string name() const;
  int parameter_dim(Eigen::Index covariates) const {
    return static_cast<int>(covariates) + (family == Family::gaussian_unknown_variance ? 1 : 0);
  }
};

/// Throws a data error when a response value is outside the family's support.
void validate_response(const LikelihoodModel& model, const Eigen::VectorXd& y);

/// log p(y | x, theta).
double log_likelihood(const LikelihoodModel& model, const Eigen::VectorXd& x, double y,
                      const Eigen::VectorXd& theta);

/// Moments of the linear predictor under one Gaussian component. For the
/// fixed families only `mean` (x'mu) and `var` (x'Sigma x) are used; the
/// unknown-variance family additionally needs the log-variance block.
struct PredictorMoments {
  double mean = 0.0;      // x' mu_beta
  double var = 0.0;       // x' Sigma_bb x
  double tau_mean = 0.0;  // mu_tau
  double tau_var = 0.0;   // Sigma_tt
  double cross = 0.0;     // x' Sigma_bt
};

PredictorMoments predictor_moments(const LikelihoodModel& model, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Per-observation, per-component quantities needed by the objective:
/// the log predictive integral I_k and the expected log-likelihood, each
/// with derivatives with respect to the PredictorMoments fields.
struct ComponentTerms {
  double log_pred = 0.0;
  PredictorMoments d_log_pred;
  double exp_loglik = 0.0;
  PredictorMoments d_exp_loglik;
};

ComponentTerms component_terms(const LikelihoodModel& model, double y, const PredictorMoments& m,
                               const QuadratureRule& quad);

/// Sum over observations of E_{N(mean, cov)} log p(y_i | theta).
double expected_loglik(const LikelihoodModel& model, const Dataset& data,
                       const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                       const QuadratureRule& quad);

/// log of the predictive integral under a single Gaussian component.
double log_component_predictive(const LikelihoodModel& model, const Eigen::VectorXd& x, double y,
                                const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                const QuadratureRule& quad);

/// log q(y | x) for a mixture posterior; `gate` is the gating input.
double log_predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                              const Eigen::VectorXd& x, double y, const QuadratureRule& quad,
                              const Eigen::VectorXd& gate);
/// Density (or mass) at y; gating input defaults to the design row.
double predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                          const Eigen::VectorXd& x, double y, const QuadratureRule& quad);
double predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                          const Eigen::VectorXd& x, double y, const QuadratureRule& quad,
                          const Eigen::VectorXd& gate);

inline constexpr double kDensityFloor = 1e-300;

/// sum_i log q(y_i | x_i), each term floored at log(1e-300). Z defaults to X.
double log_score_sum(const LikelihoodModel& model, const MixturePosterior& post,
                     const Dataset& data, const QuadratureRule& quad,
                     const Eigen::MatrixXd* gating = nullptr);

}  // namespace gmpvi
