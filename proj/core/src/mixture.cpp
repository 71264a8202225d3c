#include "gmpvi/mixture.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gmpvi/error.hpp"

namespace gmpvi {

MixturePosterior::MixturePosterior(std::vector<Eigen::VectorXd> means,
                                   std::vector<CholeskyFactor> factors, Eigen::MatrixXd eta,
                                   CovarianceStructure structure)
    : means_(std::move(means)),
      factors_(std::move(factors)),
      eta_(std::move(eta)),
      structure_(structure) {
  if (means_.empty()) throw config_error("mixture needs at least one component");
  if (factors_.size() != means_.size()) throw config_error("mixture: means/factors count mismatch");
  if (eta_.rows() != static_cast<Eigen::Index>(means_.size()) - 1)
    throw config_error("mixture: gating matrix must have K-1 rows");
  if (eta_.cols() < 1) throw config_error("mixture: gating dimension must be positive");
  const auto p = means_.front().size();
  for (std::size_t k = 0; k < means_.size(); ++k) {
    if (means_[k].size() != p || factors_[k].dim() != p)
      throw config_error("mixture: all components must share one dimension");
    if (structure_ == CovarianceStructure::diagonal && !factors_[k].is_diagonal())
      throw config_error("mixture: diagonal structure needs diagonal factors");
  }
}

Eigen::VectorXd MixturePosterior::logits(const Eigen::VectorXd& z) const {
  if (z.size() != gating_dim())
    throw config_error("gating input has dimension " + std::to_string(z.size()) + ", expected " +
                       std::to_string(gating_dim()));
  Eigen::VectorXd a(components());
  a(0) = 0.0;
  if (components() > 1) a.tail(components() - 1) = eta_ * z;
  return a;
}

Eigen::VectorXd MixturePosterior::pack() const {
  const MixtureShape s = shape();
  Eigen::VectorXd v(s.size());
  for (int k = 1; k < s.components; ++k)
    v.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim) = eta_.row(k - 1).transpose();
  for (int k = 0; k < s.components; ++k) {
    v.segment(s.mean_offset(k), s.dim) = means_[k];
    if (s.structure == CovarianceStructure::full)
      v.segment(s.factor_offset(k), s.factor_size()) = vech(factors_[k].raw());
    else
      v.segment(s.factor_offset(k), s.factor_size()) = factors_[k].raw().diagonal();
  }
  return v;
}

MixturePosterior MixturePosterior::unpack(const MixtureShape& s,
                                          const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() < s.size()) throw config_error("mixture parameter vector too short");
  Eigen::MatrixXd eta(s.components - 1, s.gating_dim);
  for (int k = 1; k < s.components; ++k)
    eta.row(k - 1) = v.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim).transpose();
  std::vector<Eigen::VectorXd> means;
  std::vector<CholeskyFactor> factors;
  for (int k = 0; k < s.components; ++k) {
    means.emplace_back(v.segment(s.mean_offset(k), s.dim));
    const Eigen::VectorXd f = v.segment(s.factor_offset(k), s.factor_size());
    if (s.structure == CovarianceStructure::full)
      factors.emplace_back(unvech(f, s.dim));
    else
      factors.emplace_back(Eigen::MatrixXd(f.asDiagonal()));
  }
  return MixturePosterior(std::move(means), std::move(factors), std::move(eta), s.structure);
}

Eigen::VectorXd select_components(const MixtureShape& s, const Eigen::Ref<const Eigen::VectorXd>& v,
                                  std::span<const int> keep, bool reanchor) {
  if (keep.empty()) throw config_error("select_components: must keep at least one component");
  MixtureShape out = s;
  out.components = static_cast<int>(keep.size());
  Eigen::VectorXd r(out.size());
  auto eta_row = [&](int k) -> Eigen::VectorXd {
    if (k == 0) return Eigen::VectorXd::Zero(s.gating_dim);
    return v.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim);
  };
  const Eigen::VectorXd anchor = reanchor ? eta_row(keep[0]) : Eigen::VectorXd::Zero(s.gating_dim);
  for (int j = 1; j < out.components; ++j)
    r.segment(Eigen::Index(j - 1) * s.gating_dim, s.gating_dim) = eta_row(keep[j]) - anchor;
  for (int j = 0; j < out.components; ++j) {
    r.segment(out.mean_offset(j), s.dim) = v.segment(s.mean_offset(keep[j]), s.dim);
    r.segment(out.factor_offset(j), s.factor_size()) =
        v.segment(s.factor_offset(keep[j]), s.factor_size());
  }
  return r;
}

MixturePosterior MixturePosterior::select(std::span<const int> keep) const {
  MixtureShape out = shape();
  out.components = static_cast<int>(keep.size());
  return unpack(out, select_components(shape(), pack(), keep, true));
}

MixtureGradient MixtureGradient::zeros(const MixtureShape& s) {
  MixtureGradient g;
  g.eta = Eigen::MatrixXd::Zero(s.components - 1, s.gating_dim);
  g.means.assign(s.components, Eigen::VectorXd::Zero(s.dim));
  g.raw.assign(s.components, Eigen::MatrixXd::Zero(s.dim, s.dim));
  return g;
}

Eigen::VectorXd MixtureGradient::pack(const MixtureShape& s) const {
  Eigen::VectorXd v(s.size());
  for (int k = 1; k < s.components; ++k)
    v.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim) = eta.row(k - 1).transpose();
  for (int k = 0; k < s.components; ++k) {
    v.segment(s.mean_offset(k), s.dim) = means[k];
    if (s.structure == CovarianceStructure::full)
      v.segment(s.factor_offset(k), s.factor_size()) = vech(raw[k]);
    else
      v.segment(s.factor_offset(k), s.factor_size()) = raw[k].diagonal();
  }
  return v;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd w(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    w.row(i) = (logits.row(i).array() - mx).exp();
    w.row(i) /= w.row(i).sum();
  }
  return w;
}

Eigen::VectorXd mixture_weights(const MixturePosterior& post, const Eigen::VectorXd& z) {
  const Eigen::VectorXd a = post.logits(z);
  Eigen::VectorXd w = (a.array() - a.maxCoeff()).exp();
  return w / w.sum();
}

Eigen::MatrixXd mixture_weights(const MixturePosterior& post, const Eigen::MatrixXd& Z) {
  if (Z.cols() != post.gating_dim()) throw config_error("gating matrix has wrong number of columns");
  Eigen::MatrixXd a(Z.rows(), post.components());
  a.col(0).setZero();
  if (post.components() > 1) a.rightCols(post.components() - 1) = Z * post.eta().transpose();
  return softmax_rows(a);
}

AveragedPosterior averaged_posterior(const MixturePosterior& post, const Eigen::MatrixXd& Z) {
  if (Z.rows() == 0) throw data_error("averaged_posterior: no gating rows");
  AveragedPosterior avg;
  avg.weights = mixture_weights(post, Z).colwise().mean().transpose();
  avg.means = post.means();
  avg.factors = post.factors();
  return avg;
}

Eigen::MatrixXd sample_theta(const AveragedPosterior& post, int count, Rng& rng) {
  if (count < 1) throw config_error("sample_theta: count must be positive");
  const int p = post.dim();
  std::vector<Eigen::MatrixXd> lowers;
  for (const auto& f : post.factors) lowers.push_back(f.lower());
  Eigen::MatrixXd out(count, p);
  Eigen::VectorXd z(p);
  const std::span<const double> w(post.weights.data(), post.weights.size());
  for (int m = 0; m < count; ++m) {
    const std::size_t k = rng.categorical(w);
    for (int j = 0; j < p; ++j) z(j) = rng.normal();
    out.row(m) = (post.means[k] + lowers[k].triangularView<Eigen::Lower>() * z).transpose();
  }
  return out;
}

Eigen::MatrixXd sample_theta(const AveragedPosterior& post, int count, std::uint64_t seed) {
  Rng rng(seed, Stream::sampling);
  return sample_theta(post, count, rng);
}

EntropyBound entropy_lower_bound_gradient(const Eigen::VectorXd& weights,
                                          const std::vector<Eigen::VectorXd>& means,
                                          const std::vector<Eigen::MatrixXd>& covs, bool diagonal) {
  const int K = static_cast<int>(weights.size());
  const int p = static_cast<int>(means.front().size());
  EntropyBound out;
  out.d_weights = Eigen::VectorXd::Zero(K);
  out.d_means.assign(K, Eigen::VectorXd::Zero(p));
  out.d_covs.assign(K, Eigen::MatrixXd::Zero(p, p));

  // Pairwise log N(mu_k; mu_l, S_kl), plus S^{-1} d and S^{-1} for the gradient.
  Eigen::MatrixXd logphi(K, K);
  std::vector<Eigen::VectorXd> sd(K * K);
  std::vector<Eigen::MatrixXd> sinv(K * K);
  for (int k = 0; k < K; ++k) {
    for (int l = k; l < K; ++l) {
      const Eigen::VectorXd d = means[k] - means[l];
      if (diagonal) {
        const Eigen::VectorXd s = covs[k].diagonal() + covs[l].diagonal();
        const Eigen::VectorXd sdv = d.cwiseQuotient(s);
        logphi(k, l) = -0.5 * (p * kLog2Pi + s.array().log().sum() + d.dot(sdv));
        sd[k * K + l] = sdv;
        sinv[k * K + l] = s.cwiseInverse();  // stored as a vector
      } else {
        const Eigen::MatrixXd s = covs[k] + covs[l];
        Eigen::LLT<Eigen::MatrixXd> llt(s);
        if (llt.info() != Eigen::Success) throw numerical_error("entropy bound: covariance not SPD");
        const Eigen::MatrixXd lmat = llt.matrixL();
        const double logdet = 2.0 * lmat.diagonal().array().log().sum();
        const Eigen::VectorXd sdv = llt.solve(d);
        logphi(k, l) = -0.5 * (p * kLog2Pi + logdet + d.dot(sdv));
        sd[k * K + l] = sdv;
        sinv[k * K + l] = llt.solve(Eigen::MatrixXd::Identity(p, p));
      }
      logphi(l, k) = logphi(k, l);
    }
  }

  Eigen::VectorXd log_norm(K);
  std::vector<double> buf(K);
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < K; ++l) buf[l] = std::log(weights(l)) + logphi(k, l);
    log_norm(k) = log_sum_exp(buf.data(), K);
  }
  out.value = -weights.dot(log_norm);

  for (int j = 0; j < K; ++j) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) acc += weights(k) * std::exp(logphi(k, j) - log_norm(k));
    out.d_weights(j) = -log_norm(j) - acc;
  }

  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < K; ++l) {
      const double c = -weights(k) * weights(l) * std::exp(logphi(k, l) - log_norm(k));
      if (c == 0.0) continue;
      const int a = std::min(k, l), b = std::max(k, l);
      // d = mu_a - mu_b in storage; orient for the (k, l) term
      const Eigen::VectorXd sdv = (k <= l) ? sd[a * K + b] : Eigen::VectorXd(-sd[a * K + b]);
      out.d_means[k] -= c * sdv;
      out.d_means[l] += c * sdv;
      Eigen::MatrixXd G;
      if (diagonal) {
        const Eigen::VectorXd& si = sinv[a * K + b];
        G = Eigen::MatrixXd((-0.5 * si + 0.5 * sdv.cwiseAbs2()).asDiagonal());
      } else {
        G = -0.5 * sinv[a * K + b] + 0.5 * sdv * sdv.transpose();
      }
      out.d_covs[k] += c * G;
      out.d_covs[l] += c * G;
    }
  }
  return out;
}

double entropy_lower_bound(const AveragedPosterior& post) {
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& f : post.factors) covs.push_back(f.covariance());
  bool diagonal = true;
  for (const auto& f : post.factors) diagonal = diagonal && f.is_diagonal();
  return entropy_lower_bound_gradient(post.weights, post.means, covs, diagonal).value;
}

nlohmann::ordered_json to_json(const MixturePosterior& post) {
  nlohmann::ordered_json j;
  j["K"] = post.components();
  j["dim"] = post.dim();
  j["gating_dim"] = post.gating_dim();
  auto means = nlohmann::ordered_json::array();
  auto raws = nlohmann::ordered_json::array();
  for (int k = 0; k < post.components(); ++k) {
    means.push_back(std::vector<double>(post.means()[k].data(),
                                        post.means()[k].data() + post.dim()));
    const Eigen::VectorXd r = post.structure() == CovarianceStructure::full
                                  ? vech(post.factors()[k].raw())
                                  : Eigen::VectorXd(post.factors()[k].raw().diagonal());
    raws.push_back(std::vector<double>(r.data(), r.data() + r.size()));
  }
  j["means"] = means;
  j["cholesky_raw"] = raws;
  auto eta = nlohmann::ordered_json::array();
  for (Eigen::Index k = 0; k < post.eta().rows(); ++k) {
    const Eigen::VectorXd row = post.eta().row(k).transpose();
    eta.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  j["eta"] = eta;
  j["structure"] = post.structure() == CovarianceStructure::full ? "full" : "diagonal";
  return j;
}

MixturePosterior mixture_from_json(const nlohmann::json& j) {
  try {
    const int K = j.at("K").get<int>();
    const int p = j.at("dim").get<int>();
    const int g = j.at("gating_dim").get<int>();
    const auto structure = j.value("structure", std::string("full")) == "diagonal"
                               ? CovarianceStructure::diagonal
                               : CovarianceStructure::full;
    MixtureShape shape{K, p, g, structure};
    Eigen::VectorXd v(shape.size());
    const auto& eta = j.at("eta");
    const auto& means = j.at("means");
    const auto& raws = j.at("cholesky_raw");
    if (static_cast<int>(eta.size()) != K - 1 || static_cast<int>(means.size()) != K ||
        static_cast<int>(raws.size()) != K)
      throw config_error("posterior JSON: component counts disagree with K");
    for (int k = 1; k < K; ++k) {
      const auto row = eta[k - 1].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != g) throw config_error("posterior JSON: bad eta row");
      for (int c = 0; c < g; ++c) v(Eigen::Index(k - 1) * g + c) = row[c];
    }
    for (int k = 0; k < K; ++k) {
      const auto m = means[k].get<std::vector<double>>();
      const auto r = raws[k].get<std::vector<double>>();
      if (static_cast<int>(m.size()) != p || static_cast<Eigen::Index>(r.size()) != shape.factor_size())
        throw config_error("posterior JSON: bad component size");
      for (int c = 0; c < p; ++c) v(shape.mean_offset(k) + c) = m[c];
      for (std::size_t c = 0; c < r.size(); ++c) v(shape.factor_offset(k) + c) = r[c];
    }
    return MixturePosterior::unpack(shape, v);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("posterior JSON: ") + e.what());
  }
}

}  // namespace gmpvi
