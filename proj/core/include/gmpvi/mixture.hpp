#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <vector>

#include "gmpvi/gaussian.hpp"
#include "gmpvi/rng.hpp"

namespace gmpvi {

enum class CovarianceStructure { full, diagonal };

/// Sizes of a mixture's variational parameters and their flat layout:
/// [eta_2..eta_K (row-major), mu_1..mu_K, factor_1..factor_K], where each
/// factor is vech(C*) for full covariances or the log-diagonal of C for
/// diagonal ones.
struct MixtureShape {
  int components = 1;
  int dim = 1;
  int gating_dim = 1;
  CovarianceStructure structure = CovarianceStructure::full;

  Eigen::Index factor_size() const {
    return structure == CovarianceStructure::full ? Eigen::Index(dim) * (dim + 1) / 2 : dim;
  }
  Eigen::Index eta_size() const { return Eigen::Index(components - 1) * gating_dim; }
  Eigen::Index mean_offset(int k) const { return eta_size() + Eigen::Index(k) * dim; }
  Eigen::Index factor_offset(int k) const {
    return eta_size() + Eigen::Index(components) * dim + Eigen::Index(k) * factor_size();
  }
  Eigen::Index size() const { return factor_offset(components); }
};

/// Gaussian mixture whose weights depend on a gating input z through a
/// linear softmax with the first component's gating vector pinned at zero.
/// Covariate-independent mixtures use the intercept-only input z = (1).
class MixturePosterior {
 public:
  MixturePosterior() = default;
  MixturePosterior(std::vector<Eigen::VectorXd> means, std::vector<CholeskyFactor> factors,
                   Eigen::MatrixXd eta,
                   CovarianceStructure structure = CovarianceStructure::full);

  int components() const { return static_cast<int>(means_.size()); }
  int dim() const { return means_.empty() ? 0 : static_cast<int>(means_.front().size()); }
  int gating_dim() const { return static_cast<int>(eta_.cols()); }
  CovarianceStructure structure() const { return structure_; }
  MixtureShape shape() const { return {components(), dim(), gating_dim(), structure_}; }

  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<CholeskyFactor>& factors() const { return factors_; }
  /// (K-1) x g; row k-1 is the gating vector of component k.
  const Eigen::MatrixXd& eta() const { return eta_; }

  /// Softmax logits (0, z'eta_2, ..., z'eta_K).
  Eigen::VectorXd logits(const Eigen::VectorXd& z) const;

  Eigen::VectorXd pack() const;
  static MixturePosterior unpack(const MixtureShape& shape, const Eigen::Ref<const Eigen::VectorXd>& v);

  /// Keeps the listed components (ascending indices). Gating vectors are
  /// re-anchored on the first survivor so every surviving weight function
  /// is unchanged up to renormalisation.
  MixturePosterior select(std::span<const int> keep) const;

 private:
  std::vector<Eigen::VectorXd> means_;
  std::vector<CholeskyFactor> factors_;
  Eigen::MatrixXd eta_;
  CovarianceStructure structure_ = CovarianceStructure::full;
};

/// Flat-vector form of MixturePosterior::select. With `reanchor` false the
/// gating rows are copied unshifted (used for optimizer moment buffers).
Eigen::VectorXd select_components(const MixtureShape& shape, const Eigen::Ref<const Eigen::VectorXd>& v,
                                  std::span<const int> keep, bool reanchor);

/// Gradient with the same structure as the parameters; pack() follows the
/// MixtureShape layout.
struct MixtureGradient {
  Eigen::MatrixXd eta;                 // (K-1) x g
  std::vector<Eigen::VectorXd> means;  // K x p
  std::vector<Eigen::MatrixXd> raw;    // K lower-triangular p x p

  static MixtureGradient zeros(const MixtureShape& shape);
  Eigen::VectorXd pack(const MixtureShape& shape) const;
};

Eigen::VectorXd mixture_weights(const MixturePosterior& post, const Eigen::VectorXd& z);
/// Row i holds the weights for gating row Z.row(i).
Eigen::MatrixXd mixture_weights(const MixturePosterior& post, const Eigen::MatrixXd& Z);

/// Row-wise softmax of an n x K logit matrix.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Covariate-free summary: the mixture with weights averaged over the
/// training gating inputs.
struct AveragedPosterior {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<CholeskyFactor> factors;

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

/// Throws a data error when Z has no rows.
AveragedPosterior averaged_posterior(const MixturePosterior& post, const Eigen::MatrixXd& Z);

/// Ancestral sampling: component by weight, then mu_k + C_k z. Rows are draws.
Eigen::MatrixXd sample_theta(const AveragedPosterior& post, int count, Rng& rng);
Eigen::MatrixXd sample_theta(const AveragedPosterior& post, int count, std::uint64_t seed);

/// Huber et al. lower bound on the mixture entropy,
/// -sum_k w_k log sum_l w_l N(mu_k; mu_l, Sigma_k + Sigma_l).
double entropy_lower_bound(const AveragedPosterior& post);

struct EntropyBound {
  double value = 0.0;
  Eigen::VectorXd d_weights;
  std::vector<Eigen::VectorXd> d_means;
  /// Symmetric G_k with dH = sum_k trace(G_k dSigma_k).
  std::vector<Eigen::MatrixXd> d_covs;
};

/// Bound and its gradient. With `diagonal` the covariances are assumed
/// diagonal and only diagonal gradient entries are produced.
EntropyBound entropy_lower_bound_gradient(const Eigen::VectorXd& weights,
                                          const std::vector<Eigen::VectorXd>& means,
                                          const std::vector<Eigen::MatrixXd>& covs, bool diagonal);

nlohmann::ordered_json to_json(const MixturePosterior& post);
MixturePosterior mixture_from_json(const nlohmann::json& j);

}  // namespace gmpvi
