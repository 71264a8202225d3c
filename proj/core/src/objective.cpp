#include "gmpvi/objective.hpp"

#include <algorithm>
#include <cmath>

#include "gmpvi/error.hpp"

namespace gmpvi {

void ObjectiveConfig::validate() const {
  if (!(beta > 0.0)) throw config_error("beta must be positive");
  if (quad_order < 1 || quad_order > kMaxQuadratureOrder)
    throw config_error("quadrature order must be in [1, 64]");
}

Eigen::VectorXd PviProblem::select_components(const Eigen::VectorXd& params, int components,
                                              std::span<const int> keep, bool reanchor) const {
  const MixtureShape s = mixture_shape(components);
  const Eigen::VectorXd mix = gmpvi::select_components(s, params.head(s.size()), keep, reanchor);
  const Eigen::Index extra = extra_size(components);
  Eigen::VectorXd out(mix.size() + extra);
  out.head(mix.size()) = mix;
  out.tail(extra) = params.tail(extra);
  return out;
}

Eigen::MatrixXd GatingSpec::apply(const Eigen::MatrixXd& X) const {
  switch (mode) {
    case Mode::design: return X;
    case Mode::intercept: return Eigen::MatrixXd::Ones(X.rows(), 1);
    case Mode::columns: {
      if (columns.empty()) throw config_error("gating: empty column subset");
      Eigen::MatrixXd Z(X.rows(), static_cast<Eigen::Index>(columns.size()));
      for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] < 0 || columns[c] >= X.cols()) throw config_error("gating: column out of range");
        Z.col(static_cast<Eigen::Index>(c)) = X.col(columns[c]);
      }
      return Z;
    }
  }
  return X;
}

Eigen::VectorXd GatingSpec::apply_row(const Eigen::VectorXd& x) const {
  return apply(Eigen::MatrixXd(x.transpose())).row(0).transpose();
}

std::vector<int> dominant_components(const Eigen::MatrixXd& weights) {
  std::vector<char> dominant(static_cast<std::size_t>(weights.cols()), 0);
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < weights.cols(); ++k)
      if (weights(i, k) > weights(i, best)) best = k;
    dominant[static_cast<std::size_t>(best)] = 1;
  }
  std::vector<int> keep;
  for (std::size_t k = 0; k < dominant.size(); ++k)
    if (dominant[k]) keep.push_back(static_cast<int>(k));
  if (keep.empty()) keep.push_back(0);
  return keep;
}

std::pair<MixturePosterior, std::vector<int>> prune_components(const MixturePosterior& post,
                                                               const Eigen::MatrixXd& gating) {
  if (gating.rows() == 0) throw data_error("prune_components: no observations");
  const std::vector<int> keep = dominant_components(mixture_weights(post, gating));
  std::vector<int> removed;
  for (int k = 0, j = 0; k < post.components(); ++k) {
    if (j < static_cast<int>(keep.size()) && keep[j] == k)
      ++j;
    else
      removed.push_back(k);
  }
  if (removed.empty()) return {post, removed};
  return {post.select(keep), removed};
}

ObjectiveValue pvi_objective(const LikelihoodModel& model, const PriorSpec& prior,
                             const MixturePosterior& post, const Dataset& data,
                             const ObjectiveConfig& cfg, const GatingSpec& gating) {
  GlmProblem problem(model, prior, data, gating, cfg);
  return problem.evaluate(post.pack(), post.components(), nullptr);
}

MixtureGradient pvi_gradient(const LikelihoodModel& model, const PriorSpec& prior,
                             const MixturePosterior& post, const Dataset& data,
                             const ObjectiveConfig& cfg, const GatingSpec& gating) {
  GlmProblem problem(model, prior, data, gating, cfg);
  Eigen::VectorXd g;
  problem.evaluate(post.pack(), post.components(), &g);
  if (!g.allFinite()) throw numerical_error("pvi_gradient: non-finite gradient");
  const MixtureShape s = post.shape();
  MixtureGradient out = MixtureGradient::zeros(s);
  for (int k = 1; k < s.components; ++k)
    out.eta.row(k - 1) = g.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim).transpose();
  for (int k = 0; k < s.components; ++k) {
    out.means[k] = g.segment(s.mean_offset(k), s.dim);
    out.raw[k] = unvech(g.segment(s.factor_offset(k), s.factor_size()), s.dim);
  }
  return out;
}

}  // namespace gmpvi
