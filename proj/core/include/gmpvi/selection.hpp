#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gmpvi/optimizer.hpp"

namespace gmpvi {

/// WAIC from an M x n matrix of log p(y_i | theta_m):
/// sum_i log mean_m p - sum_i sample-variance_m log p. Terms whose mean
/// density is below 1e-300 are floored and counted in `floored`.
double waic(const Eigen::MatrixXd& loglik, int* floored = nullptr);

/// WAIC for a GLM with draws from the averaged posterior.
double waic(const LikelihoodModel& model, const AveragedPosterior& post, const Dataset& data,
            int M, std::uint64_t seed, int* floored = nullptr);

struct BetaSearchConfig {
  enum class Mode { grid, bayes_opt };
  Mode mode = Mode::grid;
  std::vector<double> grid;
  int bo_iters = 15;
  int bo_initial = 5;
  double lower = 0.01;
  double upper = 100.0;
  int waic_samples = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BetaEvaluation {
  double beta = 0.0;
  double waic = 0.0;
  int K = 0;
  bool ok = false;
  std::string note;
};

struct BetaSelection {
  double beta = 0.0;
  FitResult fit;
  std::vector<BetaEvaluation> table;
};

/// Builds the problem for a given beta.
using ProblemFactory = std::function<std::unique_ptr<PviProblem>(double beta)>;
/// WAIC of a fitted problem.
using WaicFunction = std::function<double(const PviProblem&, const FitResult&)>;

/// Grid mode fits every grid value and returns the WAIC argmax. Bayes-opt
/// mode maximizes WAIC over log beta in [log lower, log upper] with a GP
/// surrogate and expected improvement, returning the best observed point.
/// Fits that fail are recorded and skipped; all failing is an error.
BetaSelection select_beta(const ProblemFactory& make, const WaicFunction& score,
                          const BetaSearchConfig& search, const FitConfig& fit_cfg);

/// GLM form: WAIC uses draws from the averaged posterior at the training inputs.
BetaSelection select_beta(const LikelihoodModel& model, const PriorSpec& prior, const Dataset& data,
                          const BetaSearchConfig& search, const FitConfig& fit_cfg,
                          const ObjectiveConfig& obj_cfg = {}, const GatingSpec& gating = {});

/// Expected improvement for maximization.
double expected_improvement(double mean, double sd, double best);

}  // namespace gmpvi
