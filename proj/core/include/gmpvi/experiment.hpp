#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gmpvi/hierarchical.hpp"
#include "gmpvi/latent_gp.hpp"
#include "gmpvi/metrics.hpp"
#include "gmpvi/selection.hpp"

namespace gmpvi {

/// Where the data come from: a CSV file, one of the built-in simulators,
/// or one of the named public data sets.
struct DataConfig {
  std::string source = "csv";  // csv quadrants cubic linear two_regime smooth_curve aids telescope iq lidar
  std::filesystem::path path;
  std::filesystem::path test_path;
  Eigen::Index n = 1000;
  Eigen::Index n_test = 10000;
  /// Used when no test file is given; values outside (0, 1) disable the split.
  double train_fraction = 0.0;
  bool standardize = false;
  CsvSchema schema;
  double sim_sigma2 = 0.1;
};

struct ExperimentConfig {
  /// gaussian, gaussian_unknown_variance, logistic, poisson, hierarchical or gp.
  std::string model = "gaussian";
  double noise_variance = 1.0;
  /// Noise variance as a multiple of the least-squares residual variance
  /// of the training data; used instead of noise_variance when positive.
  double noise_variance_ls_factor = 0.0;
  PriorSpec prior = PriorSpec::isotropic(1.0);
  std::optional<double> beta;
  std::optional<BetaSearchConfig> search;
  FitConfig fit;
  ObjectiveConfig objective;
  std::uint64_t seed = 0;
  DataConfig data;
  GatingSpec gating;
  std::optional<HierarchicalSpec> hierarchical;
  GpConfig gp;
  std::vector<double> fpr_targets{0.01, 0.02, 0.05, 0.1, 0.2};
  int waic_samples = 2000;
  std::filesystem::path out_dir = ".";

  void validate() const;
};

/// Reads the declarative JSON configuration; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ExperimentOutput {
  MetricReport metrics;
  FitResult fit;
  std::vector<BetaEvaluation> beta_table;
  std::vector<std::filesystem::path> files;
};

/// Fits (optionally selecting beta), evaluates on the held-out split and
/// writes fit.json, trace.csv, metrics.json and plot CSVs to out_dir.
/// Errors are rethrown with the failing stage in the message.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

/// Train/test data for a GLM configuration (after any split and standardisation).
std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& cfg);

/// Mean and variance of y under the mixture predictive at one design row.
struct PredictiveSummary {
  double mean = 0.0;
  double variance = 0.0;
};
PredictiveSummary predictive_summary(const LikelihoodModel& model, const MixturePosterior& post,
                                     const Eigen::VectorXd& x, const Eigen::VectorXd& gate,
                                     const QuadratureRule& quad);

/// Rebuilds the likelihood for a GLM configuration, resolving a
/// least-squares-relative noise variance against `train`.
LikelihoodModel experiment_likelihood(const ExperimentConfig& cfg, const Dataset& train);

}  // namespace gmpvi
