#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>

#include "gmpvi/dataset.hpp"
#include "gmpvi/likelihood.hpp"

namespace gmpvi {

/// x uniform on [-2, 2]^2; y = 0 in the top-left quadrant, 1 in the
/// bottom-right, Bernoulli(0.5) elsewhere. The design is (x1, x2), with a
/// leading intercept column when requested.
Dataset simulate_logistic_quadrants(Eigen::Index n, std::uint64_t seed, bool intercept = false);

/// x uniform on [-2, 2]; y ~ N(x^3, sigma2). Design (1, x).
Dataset simulate_cubic(Eigen::Index n, std::uint64_t seed, double sigma2 = 0.1);

/// x uniform on [-2, 2]; y ~ N(theta0 + theta1 x, sigma2). Design (1, x).
Dataset simulate_linear(Eigen::Index n, std::uint64_t seed, const Eigen::Vector2d& theta, double sigma2);

/// x uniform on [-2, 2]; y ~ N(sin(2x), s^2) with s = sd_left for x < 0
/// and sd_right otherwise. X holds the raw covariate only.
Dataset simulate_two_regime(Eigen::Index n, std::uint64_t seed, double sd_left = 0.1, double sd_right = 0.5);

/// n equally spaced x on [-2, 2]; y ~ N(sin(2x), sd^2). X holds the raw covariate only.
Dataset simulate_smooth_curve(Eigen::Index n, std::uint64_t seed, double sd = 0.1);

/// Quarterly counts read from a CSV with columns year, quarter, cases, in
/// time order. Design: intercept, t, t^2 (t rescaled to [0, 1]) and
/// dummies for quarters 2-4.
Dataset aids_dataset(const std::filesystem::path& path);

/// magic04.data: ten numeric features then class g/h (g -> 1). Design is
/// an intercept plus the raw features; standardize with training rows.
Dataset telescope_dataset(const std::filesystem::path& path);

/// CSV with kid_iq, mom_iq, mom_hs. Both IQ scores are converted to
/// z-scores; design (1, mom_hs, mom_iq).
Dataset iq_dataset(const std::filesystem::path& path);

/// Whitespace table with a header line and two columns (range, logratio).
/// X holds the raw covariate only.
Dataset lidar_dataset(const std::filesystem::path& path);

/// Exact posterior N(mean, cov) of a Gaussian linear model with a zero-mean
/// prior of covariance prior_cov.
struct ConjugatePosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
ConjugatePosterior conjugate_posterior(const Dataset& data, double sigma2, const Eigen::MatrixXd& prior_cov);

/// Mean log posterior-predictive density of a conjugate posterior on a test set.
double conjugate_llpd(const ConjugatePosterior& post, const Dataset& test, double sigma2);

/// Residual variance of least squares with n - p degrees of freedom.
double least_squares_variance(const Dataset& data);

}  // namespace gmpvi
