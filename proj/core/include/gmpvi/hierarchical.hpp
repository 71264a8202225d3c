#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "gmpvi/objective.hpp"

namespace gmpvi {

/// y_ij = f(t_i) + a_i + b_j + e_ij with f a cubic in t in [0, 1],
/// a_i ~ N(0, sigma2_a), b_j ~ N(0, sigma2_b), e_ij ~ N(0, sigma2_eps)
/// and beta ~ N(0, prior_sd^2 I).
struct HierarchicalSpec {
  double sigma2_a = 1.0;
  double sigma2_b = 1.0;
  double sigma2_eps = 1.0;
  int poly_degree = 3;
  double prior_sd = 100.0;

  void validate() const;
  int coefficient_count() const { return poly_degree + 1; }
};

/// Long-format observations grouped by time point. Times are rescaled to
/// [0, 1]; groups are indexed 0..g-1 in ascending label order.
struct HierarchicalData {
  Eigen::VectorXd times;
  double time_min = 0.0;
  double time_max = 1.0;
  std::vector<int> group_labels;
  /// Per time: observed group indices and responses (same order).
  std::vector<std::vector<int>> groups;
  std::vector<Eigen::VectorXd> y;

  int n_times() const { return static_cast<int>(times.size()); }
  int n_groups() const { return static_cast<int>(group_labels.size()); }
  Eigen::Index observation_count() const;
  /// Index of a group label; throws a data error for unknown labels.
  int group_index(int label) const;

  /// Builds from parallel columns; raw times are rescaled to [0, 1]. With a
  /// reference (training) set its time range and group labels are reused,
  /// and groups it does not know are data errors.
  static HierarchicalData from_long(const Eigen::VectorXd& time, const std::vector<int>& group,
                                    const Eigen::VectorXd& y, const HierarchicalData* reference = nullptr);
};

/// Reads columns time, group, y.
HierarchicalData load_hierarchical_csv(const std::filesystem::path& path,
                                       const HierarchicalData* reference = nullptr);

/// (1, t, ..., t^degree).
Eigen::VectorXd time_features(double t, int degree);
/// Row of the stacked design for group j at time t: (1, t, .., t^d, e_j).
Eigen::VectorXd hierarchical_design_row(double t, int group, int n_groups, int degree);

/// Method-of-moments variances from an OLS fit on time polynomial plus
/// group dummies.
HierarchicalSpec moment_variances(const HierarchicalData& data, int poly_degree = 3,
                                  double prior_sd = 100.0);

/// Mixture over (beta, b) with time-polynomial gating, followed by local
/// factors N(m_i, tau_i^2) for the time effects. Extras layout:
/// [m_1..m_n, log tau_1^2..log tau_n^2].
class HierarchicalProblem final : public PviProblem {
 public:
  HierarchicalProblem(HierarchicalSpec spec, HierarchicalData data, ObjectiveConfig cfg,
                      InitConfig init = {});

  MixtureShape mixture_shape(int components) const override;
  Eigen::Index extra_size(int) const override { return 2 * Eigen::Index(data_.n_times()); }
  Eigen::Index observation_count() const override { return data_.n_times(); }
  double beta() const override { return cfg_.beta; }
  Eigen::VectorXd initial_parameters(int components, Rng& rng) const override;
  ObjectiveValue evaluate(const Eigen::VectorXd& params, int components, Eigen::VectorXd* grad,
                          std::span<const Eigen::Index> batch = {}) const override;
  Eigen::MatrixXd training_weights(const Eigen::VectorXd& params, int components) const override;

  const HierarchicalSpec& spec() const { return spec_; }
  const HierarchicalData& data() const { return data_; }
  const Eigen::MatrixXd& gating_inputs() const { return gate_; }
  int dim() const { return spec_.coefficient_count() + data_.n_groups(); }

 private:
  HierarchicalSpec spec_;
  HierarchicalData data_;
  ObjectiveConfig cfg_;
  InitConfig init_;
  PriorSpec prior_;
  Eigen::MatrixXd gate_;
  std::vector<Eigen::MatrixXd> design_;  // per time, |O_i| x dim
  Eigen::VectorXd center_;
};

struct HierarchicalPosterior {
  MixturePosterior mixture;
  Eigen::VectorXd local_means;
  Eigen::VectorXd local_vars;

  static HierarchicalPosterior from_parameters(const HierarchicalProblem& problem,
                                               const Eigen::VectorXd& params, int components);
};

/// Mixture of g-dimensional Gaussians for the responses at one time.
struct StackedPredictive {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;

  double log_density(const Eigen::VectorXd& y) const;
  /// One-dimensional marginal of coordinate j: weights, means, variances.
  StackedPredictive marginal(int j) const;
  double mean(int j) const;
  double variance(int j) const;
  int dominant() const;
};

/// Predictive at rescaled time t for the listed groups (all groups when empty).
StackedPredictive hierarchical_predictive(const HierarchicalSpec& spec, const MixturePosterior& post,
                                          int n_groups, double t, const std::vector<int>& groups = {});

/// Dominant component (lowest index on ties) at each time.
std::vector<int> cluster_map(const MixturePosterior& post, const Eigen::VectorXd& times, int poly_degree = 3);

/// WAIC with the time effects integrated out as in the predictive; draws
/// come from the averaged posterior over the training times.
double hierarchical_waic(const HierarchicalProblem& problem, const MixturePosterior& post, int M,
                         std::uint64_t seed);

}  // namespace gmpvi
