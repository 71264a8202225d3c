#include "gmpvi/latent_gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gmpvi/error.hpp"
#include "gmpvi/selection.hpp"
#include "pvi_common.hpp"

namespace gmpvi {

void KernelSpec::validate() const {
  if (!(length_scale > 0.0) || !(signal_var > 0.0)) throw config_error("kernel hyperparameters must be positive");
  if (!(jitter >= 0.0)) throw config_error("kernel jitter must be non-negative");
}

double KernelSpec::operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return signal_var * std::exp(-0.5 * (a - b).squaredNorm() / (length_scale * length_scale));
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& k, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) throw config_error("kernel_matrix: input dimensions differ");
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j) K(i, j) = k(A.row(i).transpose(), B.row(j).transpose());
  return K;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> inducing_cholesky(const KernelSpec& k, const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd Kzz = kernel_matrix(k, Z, Z);
  Kzz.diagonal().array() += k.jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(Kzz);
  if (llt.info() != Eigen::Success) throw numerical_error("inducing-point kernel matrix is not positive definite");
  return llt;
}

}  // namespace

GpProjection GpProjection::compute(const KernelSpec& k, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
  k.validate();
  const auto llt = inducing_cholesky(k, Z);
  const Eigen::MatrixXd Kxz = kernel_matrix(k, X, Z);
  GpProjection p;
  p.A = llt.solve(Kxz.transpose()).transpose();
  p.C = kernel_matrix(k, X, X) - p.A * Kxz.transpose();
  p.C = 0.5 * (p.C + p.C.transpose());
  return p;
}

GpMarginal gp_marginal(const InducingPosterior& post, const KernelSpec& k, const Eigen::MatrixXd& X) {
  const GpProjection p = GpProjection::compute(k, X, post.Z);
  GpMarginal m;
  for (int c = 0; c < post.mixture.components(); ++c) {
    m.means.push_back(p.A * post.mixture.means()[c]);
    const Eigen::VectorXd s = post.mixture.factors()[c].covariance().diagonal();
    m.covs.push_back(p.C + p.A * s.asDiagonal() * p.A.transpose());
  }
  return m;
}

Eigen::VectorXd gp_gating_row(const Eigen::VectorXd& x) {
  Eigen::VectorXd z(x.size() + 1);
  z(0) = 1.0;
  z.tail(x.size()) = x;
  return z;
}

double GpPredictive::log_density(double y) const {
  std::vector<double> t(static_cast<std::size_t>(weights.size()));
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    t[static_cast<std::size_t>(k)] = std::log(weights(k)) + normal_logpdf(y, means(k), vars(k));
  return log_sum_exp(t.data(), static_cast<int>(t.size()));
}

double GpPredictive::density(double y) const { return std::exp(log_density(y)); }

double GpPredictive::mean() const { return weights.dot(means); }

double GpPredictive::variance() const {
  const double mu = mean();
  return weights.dot((vars.array() + (means.array() - mu).square()).matrix());
}

double GpPredictive::cdf(double y) const {
  double c = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    c += weights(k) * 0.5 * std::erfc(-(y - means(k)) / std::sqrt(2.0 * vars(k)));
  return c;
}

double GpPredictive::quantile(double level) const {
  if (!(level > 0.0 && level < 1.0)) throw config_error("quantile level must be in (0, 1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const double sd = std::sqrt(vars(k));
    lo = std::min(lo, means(k) - 40.0 * sd);
    hi = std::max(hi, means(k) + 40.0 * sd);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < level ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

GpPredictive gp_predictive(const InducingPosterior& post, const KernelSpec& k, const Eigen::VectorXd& x) {
  k.validate();
  const auto llt = inducing_cholesky(k, post.Z);
  const Eigen::VectorXd kx = kernel_matrix(k, x.transpose(), post.Z).row(0).transpose();
  const Eigen::VectorXd a = llt.solve(kx);
  const double base = std::max(k(x, x) - kx.dot(a), 0.0);
  GpPredictive p;
  const int K = post.mixture.components();
  p.weights = mixture_weights(post.mixture, gp_gating_row(x));
  p.means.resize(K);
  p.vars.resize(K);
  for (int c = 0; c < K; ++c) {
    const Eigen::VectorXd s = post.mixture.factors()[c].covariance().diagonal();
    p.means(c) = a.dot(post.mixture.means()[c]);
    p.vars(c) = base + a.cwiseAbs2().dot(s) + post.noise(c);
  }
  return p;
}

double gp_predictive_density(const InducingPosterior& post, const KernelSpec& k, const Eigen::VectorXd& x,
                             double y) {
  return gp_predictive(post, k, x).density(y);
}

Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& X, int m, std::uint64_t seed, int iterations) {
  const Eigen::Index n = X.rows();
  if (m < 1 || m > n) throw config_error("kmeans: number of centres must be in [1, n]");
  Rng rng(seed, Stream::initialization, 1);
  Eigen::MatrixXd C(m, X.cols());
  C.row(0) = X.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < m; ++c) {
    const std::size_t pick = d2.sum() > 0.0 ? rng.categorical(std::span<const double>(d2.data(), d2.size()))
                                            : rng.below(static_cast<std::uint64_t>(n));
    C.row(c) = X.row(static_cast<Eigen::Index>(pick));
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (C.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, X.cols());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
      count(assign[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (int c = 0; c < m; ++c)
      if (count(c) > 0.0) C.row(c) = sum.row(c) / count(c);
  }
  return C;
}

GpProblem::GpProblem(Eigen::MatrixXd X, Eigen::VectorXd y, Eigen::MatrixXd Z, KernelSpec kernel,
                     ObjectiveConfig cfg, double init_noise, InitConfig init)
    : X_(std::move(X)),
      y_(std::move(y)),
      Z_(std::move(Z)),
      kernel_(kernel),
      cfg_(cfg),
      init_noise_(init_noise),
      init_(init) {
  kernel_.validate();
  cfg_.validate();
  if (y_.size() == 0 || X_.rows() != y_.size()) throw data_error("GP objective: X and y must be non-empty and aligned");
  if (Z_.rows() == 0 || Z_.cols() != X_.cols()) throw config_error("GP objective: bad inducing inputs");
  if (!(init_noise_ > 0.0)) throw config_error("GP objective: initial noise must be positive");
  const auto llt = inducing_cholesky(kernel_, Z_);
  L_ = llt.matrixL();
  log_det_kzz_ = 2.0 * L_.diagonal().array().log().sum();
  const Eigen::MatrixXd Kxz = kernel_matrix(kernel_, X_, Z_);
  A_ = llt.solve(Kxz.transpose()).transpose();
  A2_ = A_.cwiseAbs2();
  c_diag_.resize(X_.rows());
  for (Eigen::Index i = 0; i < X_.rows(); ++i)
    c_diag_(i) = std::max(kernel_(X_.row(i).transpose(), X_.row(i).transpose()) - A_.row(i).dot(Kxz.row(i)), 0.0);
  kinv_diag_ = llt.solve(Eigen::MatrixXd::Identity(Z_.rows(), Z_.rows())).diagonal();
  gate_.resize(X_.rows(), X_.cols() + 1);
  for (Eigen::Index i = 0; i < X_.rows(); ++i) gate_.row(i) = gp_gating_row(X_.row(i).transpose()).transpose();
}

MixtureShape GpProblem::mixture_shape(int components) const {
  return {components, static_cast<int>(Z_.rows()), static_cast<int>(gate_.cols()), CovarianceStructure::diagonal};
}

Eigen::VectorXd GpProblem::initial_parameters(int components, Rng& rng) const {
  const MixtureShape s = mixture_shape(components);
  Eigen::VectorXd v(s.size() + components);
  for (Eigen::Index j = 0; j < s.eta_size(); ++j) v(j) = init_.eta_sd * rng.normal();
  for (int k = 0; k < components; ++k) {
    for (int j = 0; j < s.dim; ++j) v(s.mean_offset(k) + j) = init_.mean_sd * rng.normal();
    v.segment(s.factor_offset(k), s.dim).setConstant(std::log(init_.factor_diag));
  }
  v.tail(components).setConstant(std::log(init_noise_));
  return v;
}

Eigen::MatrixXd GpProblem::training_weights(const Eigen::VectorXd& params, int components) const {
  return mixture_weights(mixture(params, components), gate_);
}

Eigen::VectorXd GpProblem::select_components(const Eigen::VectorXd& params, int components,
                                             std::span<const int> keep, bool reanchor) const {
  const MixtureShape s = mixture_shape(components);
  const Eigen::VectorXd mix = gmpvi::select_components(s, params.head(s.size()), keep, reanchor);
  Eigen::VectorXd out(mix.size() + static_cast<Eigen::Index>(keep.size()));
  out.head(mix.size()) = mix;
  for (std::size_t j = 0; j < keep.size(); ++j)
    out(mix.size() + static_cast<Eigen::Index>(j)) = params(s.size() + keep[j]);
  return out;
}

MixturePosterior GpProblem::mixture(const Eigen::VectorXd& params, int components) const {
  const MixtureShape s = mixture_shape(components);
  const MixturePosterior w = MixturePosterior::unpack(s, params.head(s.size()));
  std::vector<Eigen::VectorXd> means;
  for (const auto& nu : w.means()) means.push_back(L_ * nu);
  return MixturePosterior(std::move(means), w.factors(), w.eta(), CovarianceStructure::diagonal);
}

InducingPosterior GpProblem::posterior(const Eigen::VectorXd& params, int components) const {
  return {Z_, mixture(params, components), params.tail(components).array().exp()};
}

ObjectiveValue GpProblem::evaluate(const Eigen::VectorXd& params, int K, Eigen::VectorXd* grad,
                                   std::span<const Eigen::Index> batch) const {
  const MixtureShape s = mixture_shape(K);
  if (params.size() != s.size() + K) throw config_error("GP objective: parameter vector has wrong size");
  const Eigen::Index n = y_.size(), m = Z_.rows();
  const std::vector<Eigen::Index> rows = batch.empty() ? detail::all_rows(n)
                                                       : std::vector<Eigen::Index>(batch.begin(), batch.end());
  const auto nb = static_cast<Eigen::Index>(rows.size());
  const double scale = static_cast<double>(n) / static_cast<double>(nb);
  const bool sub = !batch.empty();

  Eigen::MatrixXd Ab, A2b, Zg;
  Eigen::VectorXd yb, cb;
  if (sub) {
    Ab.resize(nb, m);
    A2b.resize(nb, m);
    Zg.resize(nb, gate_.cols());
    yb.resize(nb);
    cb.resize(nb);
    for (Eigen::Index r = 0; r < nb; ++r) {
      Ab.row(r) = A_.row(rows[r]);
      A2b.row(r) = A2_.row(rows[r]);
      Zg.row(r) = gate_.row(rows[r]);
      yb(r) = y_(rows[r]);
      cb(r) = c_diag_(rows[r]);
    }
  }
  const Eigen::MatrixXd& A = sub ? Ab : A_;
  const Eigen::MatrixXd& A2 = sub ? A2b : A2_;
  const Eigen::MatrixXd& Zgate = sub ? Zg : gate_;
  const Eigen::VectorXd& y = sub ? yb : y_;
  const Eigen::VectorXd& cd = sub ? cb : c_diag_;

  Eigen::MatrixXd eta(K - 1, s.gating_dim);
  for (int k = 1; k < K; ++k) eta.row(k - 1) = params.segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim).transpose();
  const Eigen::MatrixXd logits = detail::gating_logits(Zgate, eta);
  const Eigen::MatrixXd W = softmax_rows(logits);

  std::vector<Eigen::VectorXd> nu(K), mu(K), sdiag(K);
  Eigen::MatrixXd alpha(nb, K), omega(nb, K);
  Eigen::VectorXd noise(K);
  for (int k = 0; k < K; ++k) {
    nu[k] = params.segment(s.mean_offset(k), m);
    mu[k] = L_ * nu[k];
    sdiag[k] = (2.0 * params.segment(s.factor_offset(k), m).array()).exp();
    alpha.col(k) = A * mu[k];
    omega.col(k) = cd + A2 * sdiag[k];
    noise(k) = std::exp(params(s.size() + k));
  }

  ObjectiveValue out;
  const double floor = std::log(kDensityFloor);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(nb, K), dlogits = Eigen::MatrixXd::Zero(nb, K);
  std::vector<double> buf(K);
  double score = 0.0;
  for (Eigen::Index r = 0; r < nb; ++r) {
    const double row_max = logits.row(r).maxCoeff();
    const double log_z = row_max + std::log((logits.row(r).array() - row_max).exp().sum());
    for (int k = 0; k < K; ++k)
      buf[k] = logits(r, k) - log_z + normal_logpdf(y(r), alpha(r, k), omega(r, k) + noise(k));
    const double lp = log_sum_exp(buf.data(), K);
    if (!(lp >= floor)) {
      out.floored = true;
      score += floor;
      continue;
    }
    score += lp;
    for (int k = 0; k < K; ++k) {
      resp(r, k) = std::exp(buf[k] - lp);
      dlogits(r, k) = scale * (resp(r, k) - W(r, k));
    }
  }
  out.score = scale * score;

  const Eigen::VectorXd wbar = W.colwise().mean().transpose();
  std::vector<Eigen::MatrixXd> covs(K);
  Eigen::VectorXd h(K), prior(K);
  double reg = 0.0;
  for (int k = 0; k < K; ++k) {
    covs[k] = sdiag[k].asDiagonal();
    const Eigen::ArrayXd sq = (y - alpha.col(k)).array().square() + omega.col(k).array();
    const double ek = scale * (-0.5 * static_cast<double>(nb) * (kLog2Pi + std::log(noise(k))) -
                               sq.sum() / (2.0 * noise(k)));
    prior(k) = -0.5 * (static_cast<double>(m) * kLog2Pi + log_det_kzz_) -
               0.5 * (nu[k].squaredNorm() + kinv_diag_.dot(sdiag[k]));
    h(k) = ek + prior(k);
    reg += wbar(k) * h(k);
  }
  const EntropyBound ent = entropy_lower_bound_gradient(wbar, mu, covs, true);
  reg += ent.value;
  h += ent.d_weights;
  out.regularizer = reg;
  out.total = out.score + cfg_.beta * reg;
  if (!grad) return out;

  const double beta = cfg_.beta;
  detail::add_average_weight_gradient(W, h, beta / static_cast<double>(nb), dlogits);
  grad->resize(params.size());
  const Eigen::MatrixXd deta = detail::eta_gradient(Zgate, dlogits);
  for (int k = 1; k < K; ++k) grad->segment(Eigen::Index(k - 1) * s.gating_dim, s.gating_dim) = deta.row(k - 1).transpose();
  for (int k = 0; k < K; ++k) {
    const double wk = beta * wbar(k) * scale;
    const Eigen::ArrayXd v = omega.col(k).array() + noise(k);
    const Eigen::ArrayXd e = y.array() - alpha.col(k).array();
    const Eigen::ArrayXd rk = scale * resp.col(k).array();
    const Eigen::ArrayXd dv_score = rk * 0.5 * (e.square() / v.square() - 1.0 / v);
    const Eigen::VectorXd dalpha = (rk * e / v + wk * e / noise(k)).matrix();
    const Eigen::VectorXd domega = (dv_score - wk / (2.0 * noise(k))).matrix();
    const double dnoise = dv_score.sum() + wk * (-0.5 * static_cast<double>(nb) / noise(k) +
                                                 (e.square() + omega.col(k).array()).sum() / (2.0 * noise(k) * noise(k)));
    const Eigen::VectorXd dmu = A.transpose() * dalpha + beta * ent.d_means[k];
    grad->segment(s.mean_offset(k), m) = L_.transpose() * dmu - beta * wbar(k) * nu[k];
    const Eigen::VectorXd ds =
        A2.transpose() * domega + beta * (-0.5 * wbar(k) * kinv_diag_ + Eigen::VectorXd(ent.d_covs[k].diagonal()));
    grad->segment(s.factor_offset(k), m) = 2.0 * sdiag[k].cwiseProduct(ds);
    (*grad)(s.size() + k) = noise(k) * dnoise;
  }
  return out;
}

double GpProblem::waic(const Eigen::VectorXd& params, int K, int M, std::uint64_t seed) const {
  if (M < 2) throw config_error("waic: need at least two draws");
  const InducingPosterior post = posterior(params, K);
  const Eigen::VectorXd wbar = mixture_weights(post.mixture, gate_).colwise().mean().transpose();
  Rng rng(seed, Stream::sampling);
  const Eigen::Index m = Z_.rows(), n = y_.size();
  Eigen::MatrixXd ll(M, n);
  Eigen::VectorXd f(m);
  for (int d = 0; d < M; ++d) {
    const auto c = static_cast<int>(rng.categorical(std::span<const double>(wbar.data(), wbar.size())));
    const Eigen::VectorXd sd = post.mixture.factors()[c].covariance().diagonal().cwiseSqrt();
    for (Eigen::Index j = 0; j < m; ++j) f(j) = post.mixture.means()[c](j) + sd(j) * rng.normal();
    const Eigen::VectorXd mean = A_ * f;
    for (Eigen::Index i = 0; i < n; ++i) ll(d, i) = normal_logpdf(y_(i), mean(i), c_diag_(i) + post.noise(c));
  }
  return gmpvi::waic(ll);
}

Eigen::MatrixXd gp_inducing_points(const Eigen::MatrixXd& X, const GpConfig& cfg, std::uint64_t seed) {
  return (cfg.inducing <= 0 || cfg.inducing >= X.rows()) ? X : kmeans_centers(X, cfg.inducing, seed);
}

double gp_initial_noise(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                        const GpConfig& cfg, const FitConfig& fit_cfg) {
  if (cfg.init_noise > 0.0) return cfg.init_noise;
  const double vy = std::max((y.array() - y.mean()).square().mean(), 1e-6);
  const GpProblem pre(X, y, Z, cfg.kernel, cfg.objective, vy);
  FitConfig pc = fit_cfg;
  pc.K_init = 1;
  pc.max_steps = std::min(fit_cfg.max_steps, cfg.prefit_steps);
  const FitResult r = fit(pre, pc);
  const Eigen::VectorXd fitted = pre.projection() * pre.mixture(r.parameters, 1).means()[0];
  return std::max((y - fitted).squaredNorm() / static_cast<double>(y.size()), 1e-6);
}

GpFit gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpConfig& cfg, const FitConfig& fit_cfg) {
  if (X.rows() == 0 || y.size() != X.rows()) throw data_error("gp_fit: X and y must be non-empty and aligned");
  const Eigen::MatrixXd Z = gp_inducing_points(X, cfg, fit_cfg.seed);
  GpFit out;
  out.init_noise = gp_initial_noise(X, y, Z, cfg, fit_cfg);
  const GpProblem problem(X, y, Z, cfg.kernel, cfg.objective, out.init_noise);
  out.fit = fit(problem, fit_cfg);
  out.posterior = problem.posterior(out.fit.parameters, out.fit.components);
  return out;
}

std::vector<std::vector<double>> gp_quantile_rows(const InducingPosterior& post, const KernelSpec& k,
                                                  const Eigen::VectorXd& grid) {
  static constexpr double kLevels[] = {0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const GpPredictive p = gp_predictive(post, k, Eigen::VectorXd::Constant(1, grid(i)));
    std::vector<double> row{grid(i)};
    for (const double a : kLevels) row.push_back(p.quantile(a));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gmpvi
