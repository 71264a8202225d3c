#include "gmpvi/hierarchical.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <map>

#include "gmpvi/error.hpp"
#include "gmpvi/selection.hpp"
#include "pvi_common.hpp"

namespace gmpvi {

void HierarchicalSpec::validate() const {
  if (!(sigma2_a > 0.0) || !(sigma2_b > 0.0) || !(sigma2_eps > 0.0))
    throw config_error("hierarchical variances must be positive");
  if (poly_degree < 0) throw config_error("poly_degree must be non-negative");
  if (!(prior_sd > 0.0)) throw config_error("prior_sd must be positive");
}

Eigen::Index HierarchicalData::observation_count() const {
  Eigen::Index c = 0;
  for (const auto& v : y) c += v.size();
  return c;
}

int HierarchicalData::group_index(int label) const {
  const auto it = std::lower_bound(group_labels.begin(), group_labels.end(), label);
  if (it == group_labels.end() || *it != label) throw data_error("unknown group " + std::to_string(label));
  return static_cast<int>(it - group_labels.begin());
}

HierarchicalData HierarchicalData::from_long(const Eigen::VectorXd& time, const std::vector<int>& group,
                                             const Eigen::VectorXd& y, const HierarchicalData* reference) {
  const Eigen::Index n = y.size();
  if (n == 0) throw data_error("hierarchical data: no rows");
  if (time.size() != n || static_cast<Eigen::Index>(group.size()) != n)
    throw data_error("hierarchical data: columns differ in length");
  HierarchicalData d;
  if (reference) {
    d.group_labels = reference->group_labels;
  } else {
    d.group_labels = group;
    std::sort(d.group_labels.begin(), d.group_labels.end());
    d.group_labels.erase(std::unique(d.group_labels.begin(), d.group_labels.end()), d.group_labels.end());
  }

  std::map<double, std::vector<std::pair<int, double>>> by_time;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!std::isfinite(time(r)) || !std::isfinite(y(r)))
      throw data_error("hierarchical data: non-finite value in row " + std::to_string(r + 1));
    by_time[time(r)].emplace_back(d.group_index(group[static_cast<std::size_t>(r)]), y(r));
  }
  d.time_min = reference ? reference->time_min : by_time.begin()->first;
  d.time_max = reference ? reference->time_max : by_time.rbegin()->first;
  const double span = d.time_max - d.time_min;
  d.times.resize(static_cast<Eigen::Index>(by_time.size()));
  Eigen::Index i = 0;
  for (auto& [t, obs] : by_time) {
    std::sort(obs.begin(), obs.end());
    for (std::size_t a = 1; a < obs.size(); ++a)
      if (obs[a].first == obs[a - 1].first)
        throw data_error("hierarchical data: repeated group " +
                         std::to_string(d.group_labels[static_cast<std::size_t>(obs[a].first)]) +
                         " at time " + format_double(t));
    d.times(i++) = span > 0.0 ? (t - d.time_min) / span : 0.0;
    std::vector<int> g;
    Eigen::VectorXd v(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t a = 0; a < obs.size(); ++a) {
      g.push_back(obs[a].first);
      v(static_cast<Eigen::Index>(a)) = obs[a].second;
    }
    d.groups.push_back(std::move(g));
    d.y.push_back(std::move(v));
  }
  return d;
}

HierarchicalData load_hierarchical_csv(const std::filesystem::path& path, const HierarchicalData* reference) {
  const CsvTable t = read_csv_table(path);
  const Eigen::Index ct = t.column("time"), cg = t.column("group"), cy = t.column("y");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  Eigen::VectorXd time(n), y(n);
  std::vector<int> group(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    time(r) = row[static_cast<std::size_t>(ct)];
    y(r) = row[static_cast<std::size_t>(cy)];
    const double g = row[static_cast<std::size_t>(cg)];
    if (g != std::round(g))
      throw data_error(path.string() + ": row " + std::to_string(r + 2) + ", column group: not an integer");
    group[static_cast<std::size_t>(r)] = static_cast<int>(g);
  }
  return HierarchicalData::from_long(time, group, y, reference);
}

Eigen::VectorXd time_features(double t, int degree) {
  Eigen::VectorXd x(degree + 1);
  double p = 1.0;
  for (int d = 0; d <= degree; ++d, p *= t) x(d) = p;
  return x;
}

Eigen::VectorXd hierarchical_design_row(double t, int group, int n_groups, int degree) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(degree + 1 + n_groups);
  x.head(degree + 1) = time_features(t, degree);
  x(degree + 1 + group) = 1.0;
  return x;
}

HierarchicalSpec moment_variances(const HierarchicalData& data, int poly_degree, double prior_sd) {
  const int c = poly_degree + 1, g = data.n_groups();
  const Eigen::Index N = data.observation_count();
  const int p = c + g - 1;
  if (N <= p) throw data_error("moment_variances: too few observations");
  // OLS on time polynomial plus dummies for groups 2..g.
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, p);
  Eigen::VectorXd y(N);
  Eigen::Index r = 0;
  for (int i = 0; i < data.n_times(); ++i)
    for (Eigen::Index a = 0; a < data.y[i].size(); ++a, ++r) {
      X.row(r).head(c) = time_features(data.times(i), poly_degree).transpose();
      const int j = data.groups[i][static_cast<std::size_t>(a)];
      if (j > 0) X(r, c + j - 1) = 1.0;
      y(r) = data.y[i](a);
    }
  const Eigen::VectorXd coef = X.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd res = y - X * coef;

  // Within-time spread estimates the measurement error; spread of the
  // per-time mean residuals the time effect.
  double within = 0.0, dof = 0.0, mean_size = 0.0;
  std::vector<double> time_means;
  r = 0;
  for (int i = 0; i < data.n_times(); ++i) {
    const Eigen::Index m = data.y[i].size();
    const Eigen::VectorXd ri = res.segment(r, m);
    r += m;
    const double mu = ri.mean();
    time_means.push_back(mu);
    within += (ri.array() - mu).square().sum();
    dof += static_cast<double>(m - 1);
    mean_size += static_cast<double>(m);
  }
  mean_size /= data.n_times();
  const double total = res.squaredNorm() / static_cast<double>(N);
  const double tiny = 1e-6 * std::max(total, 1e-12);

  HierarchicalSpec s;
  s.poly_degree = poly_degree;
  s.prior_sd = prior_sd;
  s.sigma2_eps = dof > 0.0 ? std::max(within / dof, tiny) : std::max(total, tiny);
  double tm = 0.0, tv = 0.0;
  for (const double v : time_means) tm += v;
  tm /= static_cast<double>(time_means.size());
  for (const double v : time_means) tv += (v - tm) * (v - tm);
  tv = time_means.size() > 1 ? tv / static_cast<double>(time_means.size() - 1) : 0.0;
  s.sigma2_a = std::max(tv - s.sigma2_eps / mean_size, tiny);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(g);
  for (int j = 1; j < g; ++j) b(j) = coef(c + j - 1);
  s.sigma2_b = g > 1 ? std::max((b.array() - b.mean()).square().sum() / (g - 1), tiny) : tiny;
  return s;
}

HierarchicalProblem::HierarchicalProblem(HierarchicalSpec spec, HierarchicalData data,
                                         ObjectiveConfig cfg, InitConfig init)
    : spec_(spec), data_(std::move(data)), cfg_(cfg), init_(init) {
  spec_.validate();
  cfg_.validate();
  if (data_.n_times() == 0) throw data_error("hierarchical objective: no observations");
  const int c = spec_.coefficient_count(), g = data_.n_groups(), p = dim();
  Eigen::VectorXd prior_var(p);
  prior_var.head(c).setConstant(spec_.prior_sd * spec_.prior_sd);
  prior_var.tail(g).setConstant(spec_.sigma2_b);
  prior_ = PriorSpec::diagonal(prior_var);

  gate_.resize(data_.n_times(), c);
  Eigen::MatrixXd A = prior_var.cwiseInverse().asDiagonal();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < data_.n_times(); ++i) {
    gate_.row(i) = time_features(data_.times(i), spec_.poly_degree).transpose();
    Eigen::MatrixXd Xi(data_.y[i].size(), p);
    for (Eigen::Index a = 0; a < Xi.rows(); ++a)
      Xi.row(a) = hierarchical_design_row(data_.times(i), data_.groups[i][static_cast<std::size_t>(a)], g,
                                          spec_.poly_degree)
                      .transpose();
    A += Xi.transpose() * Xi / spec_.sigma2_eps;
    rhs += Xi.transpose() * data_.y[i] / spec_.sigma2_eps;
    design_.push_back(std::move(Xi));
  }
  // Posterior mean of (beta, b) with the time effects left out: used to
  // centre the initial components.
  center_ = A.llt().solve(rhs);
}

MixtureShape HierarchicalProblem::mixture_shape(int components) const {
  return {components, dim(), spec_.coefficient_count(), CovarianceStructure::full};
}

Eigen::VectorXd HierarchicalProblem::initial_parameters(int components, Rng& rng) const {
  const MixtureShape s = mixture_shape(components);
  const Eigen::Index n = data_.n_times();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(s.size() + 2 * n);
  for (Eigen::Index j = 0; j < s.eta_size(); ++j) v(j) = init_.eta_sd * rng.normal();
  const double log_diag = std::log(init_.factor_diag);
  for (int k = 0; k < components; ++k) {
    for (int j = 0; j < s.dim; ++j) v(s.mean_offset(k) + j) = center_(j) + init_.mean_sd * rng.normal();
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(s.dim, s.dim);
    raw.diagonal().setConstant(log_diag);
    v.segment(s.factor_offset(k), s.factor_size()) = vech(raw);
  }
  v.tail(n).setConstant(std::log(spec_.sigma2_a));
  return v;
}

Eigen::MatrixXd HierarchicalProblem::training_weights(const Eigen::VectorXd& params, int components) const {
  return mixture_weights(mixture(params, components), gate_);
}

ObjectiveValue HierarchicalProblem::evaluate(const Eigen::VectorXd& params, int K, Eigen::VectorXd* grad,
                                             std::span<const Eigen::Index> batch) const {
  const MixtureShape s = mixture_shape(K);
  const Eigen::Index n = data_.n_times();
  if (params.size() != s.size() + 2 * n) throw config_error("hierarchical objective: parameter vector has wrong size");
  const MixturePosterior post = MixturePosterior::unpack(s, params.head(s.size()));
  const Eigen::VectorXd m = params.segment(s.size(), n);
  const Eigen::VectorXd tau2 = params.tail(n).array().exp();
  const int p = s.dim;
  const double se = spec_.sigma2_eps, sa = spec_.sigma2_a, s_noise = se + sa;

  const std::vector<Eigen::Index> rows = batch.empty() ? detail::all_rows(n)
                                                       : std::vector<Eigen::Index>(batch.begin(), batch.end());
  const auto nb = static_cast<Eigen::Index>(rows.size());
  const double scale = static_cast<double>(n) / static_cast<double>(nb);

  Eigen::MatrixXd Z(nb, gate_.cols());
  for (Eigen::Index r = 0; r < nb; ++r) Z.row(r) = gate_.row(rows[r]);
  const Eigen::MatrixXd logits = detail::gating_logits(Z, post.eta());
  const Eigen::MatrixXd W = softmax_rows(logits);

  std::vector<Eigen::MatrixXd> covs(K);
  for (int k = 0; k < K; ++k) covs[k] = post.factors()[k].covariance();

  // Score: stacked Gaussian predictive per time.
  ObjectiveValue out;
  const double floor = std::log(kDensityFloor);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(nb, K), dlogits = Eigen::MatrixXd::Zero(nb, K);
  std::vector<Eigen::VectorXd> alpha(static_cast<std::size_t>(nb * K));
  std::vector<Eigen::MatrixXd> sinv(static_cast<std::size_t>(nb * K));
  std::vector<double> buf(K);
  double score = 0.0;
  for (Eigen::Index r = 0; r < nb; ++r) {
    const Eigen::Index i = rows[r];
    const Eigen::MatrixXd& Xi = design_[i];
    const Eigen::Index mi = Xi.rows();
    const double row_max = logits.row(r).maxCoeff();
    const double log_z = row_max + std::log((logits.row(r).array() - row_max).exp().sum());
    for (int k = 0; k < K; ++k) {
      Eigen::MatrixXd S = Xi * covs[k] * Xi.transpose();
      S.diagonal().array() += s_noise;
      const Eigen::LLT<Eigen::MatrixXd> llt(S);
      if (llt.info() != Eigen::Success) throw numerical_error("hierarchical objective: predictive covariance not SPD");
      const Eigen::VectorXd e = data_.y[i] - Xi * post.means()[k];
      const Eigen::VectorXd a = llt.solve(e);
      const Eigen::MatrixXd L = llt.matrixL();
      const double logdet = 2.0 * L.diagonal().array().log().sum();
      buf[k] = logits(r, k) - log_z - 0.5 * (static_cast<double>(mi) * kLog2Pi + logdet + e.dot(a));
      if (grad) {
        alpha[static_cast<std::size_t>(r * K + k)] = a;
        sinv[static_cast<std::size_t>(r * K + k)] = llt.solve(Eigen::MatrixXd::Identity(mi, mi));
      }
    }
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

  // Regularizer: expected log joint under the factorized posterior.
  const Eigen::VectorXd wbar = W.colwise().mean().transpose();
  Eigen::VectorXd h(K);
  std::vector<PriorExpectation> priors;
  double reg = 0.0;
  for (int k = 0; k < K; ++k) {
    double ek = 0.0;
    for (Eigen::Index r = 0; r < nb; ++r) {
      const Eigen::Index i = rows[r];
      const Eigen::MatrixXd& Xi = design_[i];
      const Eigen::VectorXd res = data_.y[i] - Xi * post.means()[k] - Eigen::VectorXd::Constant(Xi.rows(), m(i));
      const double quad = (Xi * covs[k]).cwiseProduct(Xi).sum();
      ek += -0.5 * static_cast<double>(Xi.rows()) * (kLog2Pi + std::log(se)) -
            (res.squaredNorm() + quad + static_cast<double>(Xi.rows()) * tau2(i)) / (2.0 * se);
    }
    priors.push_back(expected_log_prior_gradient(prior_, post.means()[k], covs[k]));
    h(k) = scale * ek + priors.back().value;
    reg += wbar(k) * h(k);
  }
  double local = 0.0;
  for (Eigen::Index r = 0; r < nb; ++r) {
    const Eigen::Index i = rows[r];
    local += -0.5 * (kLog2Pi + std::log(sa)) - (m(i) * m(i) + tau2(i)) / (2.0 * sa) +
             0.5 * (kLog2Pi + 1.0 + std::log(tau2(i)));
  }
  reg += scale * local;
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
  Eigen::VectorXd dm = Eigen::VectorXd::Zero(n), drho = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd dmu = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    const double wk = beta * wbar(k) * scale;
    for (Eigen::Index r = 0; r < nb; ++r) {
      const Eigen::Index i = rows[r];
      const Eigen::MatrixXd& Xi = design_[i];
      const auto idx = static_cast<std::size_t>(r * K + k);
      const double c = scale * resp(r, k);
      if (c != 0.0) {
        dmu += c * (Xi.transpose() * alpha[idx]);
        G += 0.5 * c * (Xi.transpose() * (alpha[idx] * alpha[idx].transpose() - sinv[idx]) * Xi);
      }
      const Eigen::VectorXd res = data_.y[i] - Xi * post.means()[k] - Eigen::VectorXd::Constant(Xi.rows(), m(i));
      dmu += wk * (Xi.transpose() * res) / se;
      G -= wk / (2.0 * se) * (Xi.transpose() * Xi);
      dm(i) += wk * res.sum() / se;
    }
    dmu += beta * (wbar(k) * priors[k].d_mean + ent.d_means[k]);
    G += beta * (wbar(k) * priors[k].d_cov + ent.d_covs[k]);
    g.means[k] = dmu;
    g.raw[k] = sigma_gradient_to_raw(G, post.factors()[k]);
  }
  for (Eigen::Index r = 0; r < nb; ++r) {
    const Eigen::Index i = rows[r];
    const auto mi = static_cast<double>(design_[i].rows());
    dm(i) -= beta * scale * m(i) / sa;
    drho(i) = beta * scale * (-mi * tau2(i) / (2.0 * se) - tau2(i) / (2.0 * sa) + 0.5);
  }
  grad->resize(params.size());
  grad->head(s.size()) = g.pack(s);
  grad->segment(s.size(), n) = dm;
  grad->tail(n) = drho;
  return out;
}

HierarchicalPosterior HierarchicalPosterior::from_parameters(const HierarchicalProblem& problem,
                                                             const Eigen::VectorXd& params, int components) {
  const Eigen::Index n = problem.data().n_times();
  const Eigen::Index off = problem.mixture_shape(components).size();
  return {problem.mixture(params, components), params.segment(off, n), params.tail(n).array().exp()};
}

double StackedPredictive::log_density(const Eigen::VectorXd& y) const {
  std::vector<double> t(static_cast<std::size_t>(weights.size()));
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    t[static_cast<std::size_t>(k)] = std::log(weights(k)) + mvn_logpdf(y, means[k], covs[k]);
  return log_sum_exp(t.data(), static_cast<int>(t.size()));
}

StackedPredictive StackedPredictive::marginal(int j) const {
  StackedPredictive m;
  m.weights = weights;
  for (std::size_t k = 0; k < means.size(); ++k) {
    m.means.push_back(Eigen::VectorXd::Constant(1, means[k](j)));
    m.covs.push_back(Eigen::MatrixXd::Constant(1, 1, covs[k](j, j)));
  }
  return m;
}

double StackedPredictive::mean(int j) const {
  double v = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) v += weights(static_cast<Eigen::Index>(k)) * means[k](j);
  return v;
}

double StackedPredictive::variance(int j) const {
  const double mu = mean(j);
  double v = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    const double d = means[k](j) - mu;
    v += weights(static_cast<Eigen::Index>(k)) * (covs[k](j, j) + d * d);
  }
  return v;
}

int StackedPredictive::dominant() const {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < weights.size(); ++k)
    if (weights(k) > weights(best)) best = k;
  return static_cast<int>(best);
}

StackedPredictive hierarchical_predictive(const HierarchicalSpec& spec, const MixturePosterior& post,
                                          int n_groups, double t, const std::vector<int>& groups) {
  std::vector<int> gs = groups;
  if (gs.empty())
    for (int j = 0; j < n_groups; ++j) gs.push_back(j);
  const int p = spec.coefficient_count() + n_groups;
  if (post.dim() != p) throw config_error("hierarchical_predictive: posterior dimension mismatch");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(gs.size()), p);
  for (std::size_t a = 0; a < gs.size(); ++a) {
    if (gs[a] < 0 || gs[a] >= n_groups) throw data_error("hierarchical_predictive: unknown group index");
    X.row(static_cast<Eigen::Index>(a)) = hierarchical_design_row(t, gs[a], n_groups, spec.poly_degree).transpose();
  }
  StackedPredictive out;
  out.weights = mixture_weights(post, time_features(t, spec.poly_degree));
  for (int k = 0; k < post.components(); ++k) {
    out.means.push_back(X * post.means()[k]);
    Eigen::MatrixXd S = X * post.factors()[k].covariance() * X.transpose();
    S.diagonal().array() += spec.sigma2_eps + spec.sigma2_a;
    out.covs.push_back(std::move(S));
  }
  return out;
}

std::vector<int> cluster_map(const MixturePosterior& post, const Eigen::VectorXd& times, int poly_degree) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    const Eigen::VectorXd w = mixture_weights(post, time_features(times(i), poly_degree));
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < w.size(); ++k)
      if (w(k) > w(best)) best = k;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

double hierarchical_waic(const HierarchicalProblem& problem, const MixturePosterior& post, int M,
                         std::uint64_t seed) {
  const HierarchicalData& d = problem.data();
  const HierarchicalSpec& spec = problem.spec();
  const AveragedPosterior avg = averaged_posterior(post, problem.gating_inputs());
  Rng rng(seed, Stream::sampling);
  const Eigen::MatrixXd theta = sample_theta(avg, M, rng);
  const double s = spec.sigma2_eps + spec.sigma2_a;
  Eigen::MatrixXd ll(M, d.n_times());
  for (int i = 0; i < d.n_times(); ++i) {
    Eigen::MatrixXd Xi(d.y[i].size(), post.dim());
    for (Eigen::Index a = 0; a < Xi.rows(); ++a)
      Xi.row(a) = hierarchical_design_row(d.times(i), d.groups[i][static_cast<std::size_t>(a)], d.n_groups(),
                                          spec.poly_degree)
                      .transpose();
    const Eigen::MatrixXd fitted = theta * Xi.transpose();
    for (int mm = 0; mm < M; ++mm) {
      double v = 0.0;
      for (Eigen::Index a = 0; a < Xi.rows(); ++a) v += normal_logpdf(d.y[i](a), fitted(mm, a), s);
      ll(mm, i) = v;
    }
  }
  return waic(ll);
}

}  // namespace gmpvi
