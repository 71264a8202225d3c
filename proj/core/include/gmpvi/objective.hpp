#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "gmpvi/dataset.hpp"
#include "gmpvi/likelihood.hpp"
#include "gmpvi/mixture.hpp"
#include "gmpvi/quadrature.hpp"
#include "gmpvi/rng.hpp"

namespace gmpvi {

struct ObjectiveConfig {
  double beta = 1.0;
  int quad_order = kDefaultQuadratureOrder;
  /// Reductions always run in a fixed sequential order in this
  /// implementation; the flag is carried so results record how they were made.
  bool deterministic = true;

  void validate() const;
};

/// Objective value split into its two parts: total = score + beta * regularizer.
struct ObjectiveValue {
  double total = 0.0;
  double score = 0.0;
  double regularizer = 0.0;
  /// At least one predictive density hit the 1e-300 floor.
  bool floored = false;
};

/// A PVI objective over a flat parameter vector whose leading block is a
/// mixture posterior (see MixtureShape) followed by model-specific extras.
/// The optimizer only talks to this interface.
class PviProblem {
 public:
  virtual ~PviProblem() = default;

  virtual MixtureShape mixture_shape(int components) const = 0;
  /// Number of trailing non-mixture parameters.
  virtual Eigen::Index extra_size(int /*components*/) const { return 0; }
  Eigen::Index parameter_count(int components) const {
    return mixture_shape(components).size() + extra_size(components);
  }

  virtual Eigen::Index observation_count() const = 0;
  virtual double beta() const = 0;

  virtual Eigen::VectorXd initial_parameters(int components, Rng& rng) const = 0;

  /// Objective (and gradient when `grad` is non-null). A non-empty `batch`
  /// evaluates on those observations with sums rescaled by n / |batch|.
  virtual ObjectiveValue evaluate(const Eigen::VectorXd& params, int components,
                                  Eigen::VectorXd* grad,
                                  std::span<const Eigen::Index> batch = {}) const = 0;

  /// n x K gating weights at the training inputs.
  virtual Eigen::MatrixXd training_weights(const Eigen::VectorXd& params, int components) const = 0;

  /// Drops components. Default handles the mixture block and keeps extras as is.
  virtual Eigen::VectorXd select_components(const Eigen::VectorXd& params, int components,
                                            std::span<const int> keep, bool reanchor) const;

  /// The mixture part of a parameter vector as a posterior.
  virtual MixturePosterior mixture(const Eigen::VectorXd& params, int components) const {
    return MixturePosterior::unpack(mixture_shape(components), params.head(mixture_shape(components).size()));
  }
};

/// How gating inputs are formed from a design row.
struct GatingSpec {
  enum class Mode { design, intercept, columns };
  Mode mode = Mode::design;
  std::vector<int> columns;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd apply_row(const Eigen::VectorXd& x) const;
};

/// Initial spread for fresh components.
struct InitConfig {
  double mean_sd = 0.5;
  double factor_diag = 0.5;
  double eta_sd = 0.1;
};

/// VGM-PVI objective for a GLM likelihood with a Gaussian prior.
class GlmProblem final : public PviProblem {
 public:
  GlmProblem(LikelihoodModel model, PriorSpec prior, Dataset data, GatingSpec gating,
             ObjectiveConfig cfg, InitConfig init = {});

  MixtureShape mixture_shape(int components) const override;
  Eigen::Index observation_count() const override { return data_.size(); }
  double beta() const override { return cfg_.beta; }
  Eigen::VectorXd initial_parameters(int components, Rng& rng) const override;
  ObjectiveValue evaluate(const Eigen::VectorXd& params, int components, Eigen::VectorXd* grad,
                          std::span<const Eigen::Index> batch = {}) const override;
  Eigen::MatrixXd training_weights(const Eigen::VectorXd& params, int components) const override;

  const LikelihoodModel& model() const { return model_; }
  const PriorSpec& prior() const { return prior_; }
  const Dataset& data() const { return data_; }
  const Eigen::MatrixXd& gating_inputs() const { return gate_; }
  const GatingSpec& gating() const { return gating_; }
  const QuadratureRule& quadrature() const { return quad_; }
  int dim() const { return model_.parameter_dim(data_.covariates()); }

 private:
  LikelihoodModel model_;
  PriorSpec prior_;
  Dataset data_;
  GatingSpec gating_;
  Eigen::MatrixXd gate_;
  ObjectiveConfig cfg_;
  InitConfig init_;
  QuadratureRule quad_;
};

/// Score plus beta times the regularizer for a GLM mixture posterior.
ObjectiveValue pvi_objective(const LikelihoodModel& model, const PriorSpec& prior,
                             const MixturePosterior& post, const Dataset& data,
                             const ObjectiveConfig& cfg, const GatingSpec& gating = {});

/// Gradient of pvi_objective over all free variational parameters.
/// Throws a numerical error when any entry is not finite.
MixtureGradient pvi_gradient(const LikelihoodModel& model, const PriorSpec& prior,
                             const MixturePosterior& post, const Dataset& data,
                             const ObjectiveConfig& cfg, const GatingSpec& gating = {});

/// Components that are the (lowest-index) argmax of at least one row of
/// the n x K weight matrix.
std::vector<int> dominant_components(const Eigen::MatrixXd& weights);

/// Removes every component that never holds the largest gating weight on
/// the training inputs; never removes the last component.
std::pair<MixturePosterior, std::vector<int>> prune_components(const MixturePosterior& post,
                                                               const Eigen::MatrixXd& gating);

}  // namespace gmpvi
