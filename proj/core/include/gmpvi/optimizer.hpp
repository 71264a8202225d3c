#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "gmpvi/objective.hpp"

namespace gmpvi {

struct FitConfig {
  double step_size = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 50000;
  int prune_interval = 2000;
  /// Stop when |f_t - f_{t-window}| / max(1, |f_t|) < convergence_tol.
  double convergence_tol = 1e-6;
  int convergence_window = 200;
  int K_init = 10;
  std::uint64_t seed = 0;
  /// 0 uses every observation each step.
  int minibatch_size = 0;
  int init_attempts = 10;

  void validate() const;
};

struct PruneEvent {
  int step = 0;
  std::vector<int> removed;
};

struct FitResult {
  MixturePosterior posterior;
  /// Full parameter vector, including model-specific extras.
  Eigen::VectorXd parameters;
  int components = 0;
  std::vector<double> objective_trace;
  std::vector<double> score_trace;
  std::vector<double> regularizer_trace;
  std::vector<int> k_trace;
  std::vector<PruneEvent> pruned_history;
  double beta = 1.0;
  bool converged = false;
  bool floored = false;
  int steps = 0;

  double final_objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

/// Adam ascent with periodic pruning of components that never dominate.
FitResult fit(const PviProblem& problem, const FitConfig& cfg);

/// GLM convenience wrapper.
FitResult fit(const LikelihoodModel& model, const PriorSpec& prior, const Dataset& data,
              const ObjectiveConfig& obj_cfg, const FitConfig& fit_cfg,
              const GatingSpec& gating = {});

nlohmann::ordered_json to_json(const FitResult& r);

/// CSV with columns step, objective, K, score_term, regularizer_term.
void write_trace_csv(const std::filesystem::path& path, const FitResult& r);

}  // namespace gmpvi
