#include <cmath>
#include <vector>

#include "gmpvi/error.hpp"
#include "gmpvi/objective.hpp"
#include "pvi_common.hpp"

namespace gmpvi {

GlmProblem::GlmProblem(LikelihoodModel model, PriorSpec prior, Dataset data, GatingSpec gating,
                       ObjectiveConfig cfg, InitConfig init)
    : model_(model),
      prior_(std::move(prior)),
      data_(std::move(data)),
      gating_(std::move(gating)),
      cfg_(cfg),
      init_(init) {
  cfg_.validate();
  if (data_.size() == 0) throw data_error("GLM objective needs at least one observation");
  validate_response(model_, data_.y);
  if (prior_.kind == PriorSpec::Kind::gaussian && prior_.covariance.rows() != dim())
    throw config_error("prior dimension " + std::to_string(prior_.covariance.rows()) +
                       " does not match parameter dimension " + std::to_string(dim()));
  gate_ = gating_.apply(data_.X);
  quad_ = gauss_hermite_rule(cfg_.quad_order);
}

MixtureShape GlmProblem::mixture_shape(int components) const {
  return {components, dim(), static_cast<int>(gate_.cols()), CovarianceStructure::full};
}

Eigen::VectorXd GlmProblem::initial_parameters(int components, Rng& rng) const {
  const MixtureShape s = mixture_shape(components);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index j = 0; j < s.eta_size(); ++j) v(j) = init_.eta_sd * rng.normal();
  const double log_diag = std::log(init_.factor_diag);
  for (int k = 0; k < components; ++k) {
    for (int j = 0; j < s.dim; ++j) v(s.mean_offset(k) + j) = init_.mean_sd * rng.normal();
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(s.dim, s.dim);
    raw.diagonal().setConstant(log_diag);
    v.segment(s.factor_offset(k), s.factor_size()) = vech(raw);
  }
  return v;
}

Eigen::MatrixXd GlmProblem::training_weights(const Eigen::VectorXd& params, int components) const {
  return mixture_weights(mixture(params, components), gate_);
}

ObjectiveValue GlmProblem::evaluate(const Eigen::VectorXd& params, int K, Eigen::VectorXd* grad,
                                    std::span<const Eigen::Index> batch) const {
  const MixtureShape s = mixture_shape(K);
  if (params.size() != s.size()) throw config_error("GLM objective: parameter vector has wrong size");
  const MixturePosterior post = MixturePosterior::unpack(s, params);
  const bool unknown = model_.family == Family::gaussian_unknown_variance;
  const Eigen::Index n = data_.size();
  const Eigen::Index q = data_.covariates();
  const int p = s.dim;

  Eigen::MatrixXd Xsub, Zsub;
  Eigen::VectorXd ysub;
  const bool sub = !batch.empty();
  if (sub) {
    const auto nb = static_cast<Eigen::Index>(batch.size());
    Xsub.resize(nb, q);
    Zsub.resize(nb, gate_.cols());
    ysub.resize(nb);
    for (Eigen::Index r = 0; r < nb; ++r) {
      Xsub.row(r) = data_.X.row(batch[r]);
      Zsub.row(r) = gate_.row(batch[r]);
      ysub(r) = data_.y(batch[r]);
    }
  }
  const Eigen::MatrixXd& X = sub ? Xsub : data_.X;
  const Eigen::MatrixXd& Z = sub ? Zsub : gate_;
  const Eigen::VectorXd& y = sub ? ysub : data_.y;
  const Eigen::Index nb = X.rows();
  const double scale = static_cast<double>(n) / static_cast<double>(nb);

  std::vector<Eigen::MatrixXd> covs(K);
  Eigen::MatrixXd mean_m(nb, K), var_m(nb, K), cross_m = Eigen::MatrixXd::Zero(nb, K);
  for (int k = 0; k < K; ++k) {
    covs[k] = post.factors()[k].covariance();
    const Eigen::VectorXd& mu = post.means()[k];
    mean_m.col(k) = X * mu.head(q);
    const Eigen::MatrixXd xs = X * covs[k].topLeftCorner(q, q);
    var_m.col(k) = xs.cwiseProduct(X).rowwise().sum();
    if (unknown) cross_m.col(k) = X * covs[k].col(q).head(q);
  }

  const Eigen::MatrixXd logits = detail::gating_logits(Z, post.eta());
  const Eigen::MatrixXd W = softmax_rows(logits);

  // Per (i, k) predictive integrals and expected log-likelihood terms.
  Eigen::MatrixXd log_i(nb, K), exp_ll(nb, K);
  std::vector<Eigen::MatrixXd> dpred(5, Eigen::MatrixXd(nb, K)), dexp(5, Eigen::MatrixXd(nb, K));
  for (int k = 0; k < K; ++k) {
    PredictorMoments m;
    if (unknown) {
      m.tau_mean = post.means()[k](q);
      m.tau_var = covs[k](q, q);
    }
    for (Eigen::Index i = 0; i < nb; ++i) {
      m.mean = mean_m(i, k);
      m.var = var_m(i, k);
      m.cross = cross_m(i, k);
      const ComponentTerms t = component_terms(model_, y(i), m, quad_);
      log_i(i, k) = t.log_pred;
      exp_ll(i, k) = t.exp_loglik;
      dpred[0](i, k) = t.d_log_pred.mean;
      dpred[1](i, k) = t.d_log_pred.var;
      dpred[2](i, k) = t.d_log_pred.cross;
      dpred[3](i, k) = t.d_log_pred.tau_mean;
      dpred[4](i, k) = t.d_log_pred.tau_var;
      dexp[0](i, k) = t.d_exp_loglik.mean;
      dexp[1](i, k) = t.d_exp_loglik.var;
      dexp[2](i, k) = t.d_exp_loglik.cross;
      dexp[3](i, k) = t.d_exp_loglik.tau_mean;
      dexp[4](i, k) = t.d_exp_loglik.tau_var;
    }
  }

  ObjectiveValue out;
  const double floor = std::log(kDensityFloor);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(nb, K);
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(nb, K);
  std::vector<double> buf(K);
  double score = 0.0;
  for (Eigen::Index i = 0; i < nb; ++i) {
    const double row_max = logits.row(i).maxCoeff();
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(logits(i, k) - row_max);
    const double log_z = row_max + std::log(z);
    for (int k = 0; k < K; ++k) buf[k] = logits(i, k) - log_z + log_i(i, k);
    const double lp = log_sum_exp(buf.data(), K);
    if (!(lp >= floor)) {
      out.floored = true;
      score += floor;
      continue;
    }
    score += lp;
    for (int k = 0; k < K; ++k) {
      resp(i, k) = std::exp(buf[k] - lp);
      dlogits(i, k) = scale * (resp(i, k) - W(i, k));
    }
  }
  out.score = scale * score;

  const Eigen::VectorXd wbar = W.colwise().mean().transpose();
  std::vector<PriorExpectation> priors;
  Eigen::VectorXd h(K);
  double reg = 0.0;
  for (int k = 0; k < K; ++k) {
    priors.push_back(expected_log_prior_gradient(prior_, post.means()[k], covs[k]));
    const double ek = scale * exp_ll.col(k).sum();
    h(k) = ek + priors.back().value;
    reg += wbar(k) * h(k);
  }
  const EntropyBound ent = entropy_lower_bound_gradient(wbar, post.means(), covs, false);
  reg += ent.value;
  h += ent.d_weights;
  out.regularizer = reg;
  out.total = out.score + cfg_.beta * reg;

  if (!grad) return out;

  const double beta = cfg_.beta;
  detail::add_average_weight_gradient(W, h, beta / static_cast<double>(nb), dlogits);
  MixtureGradient g = MixtureGradient::zeros(s);
  g.eta = detail::eta_gradient(Z, dlogits);
  for (int k = 0; k < K; ++k) {
    const double wk = beta * wbar(k) * scale;
    auto coef = [&](int f) -> Eigen::VectorXd {
      return scale * resp.col(k).cwiseProduct(dpred[f].col(k)) + wk * dexp[f].col(k);
    };
    Eigen::VectorXd dmu = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    dmu.head(q) = X.transpose() * coef(0);
    G.topLeftCorner(q, q) = X.transpose() * coef(1).asDiagonal() * X;
    if (unknown) {
      const Eigen::VectorXd gc = 0.5 * (X.transpose() * coef(2));
      G.col(q).head(q) = gc;
      G.row(q).head(q) = gc.transpose();
      dmu(q) = coef(3).sum();
      G(q, q) = coef(4).sum();
    }
    dmu += beta * (wbar(k) * priors[k].d_mean + ent.d_means[k]);
    G += beta * (wbar(k) * priors[k].d_cov + ent.d_covs[k]);
    g.means[k] = dmu;
    g.raw[k] = sigma_gradient_to_raw(G, post.factors()[k]);
  }
  *grad = g.pack(s);
  return out;
}

}  // namespace gmpvi
