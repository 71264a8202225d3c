#include "gmpvi/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gmpvi/error.hpp"
#include "gmpvi/simulate.hpp"

namespace gmpvi {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw config_error(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw config_error("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(where + "." + key + " has the wrong type");
  }
}

bool is_glm(const std::string& model) { return model != "hierarchical" && model != "gp"; }

PriorSpec parse_prior(const json& j) {
  check_keys(j, {"sd", "variances", "covariance"}, "prior");
  if (j.contains("covariance")) {
    const auto rows = get<std::vector<std::vector<double>>>(j, "covariance", {}, "prior");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.size()) throw config_error("prior.covariance must be square");
      for (std::size_t c = 0; c < rows.size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return PriorSpec::gaussian(m);
  }
  if (j.contains("variances")) {
    const auto v = get<std::vector<double>>(j, "variances", {}, "prior");
    return PriorSpec::diagonal(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return PriorSpec::isotropic(get<double>(j, "sd", 1.0, "prior"));
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t salt) { return splitmix64(seed ^ splitmix64(salt)); }

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& idx) { return d.rows(idx); }

double mean_y_scale_log(const Dataset& d) { return std::log(d.standardization.y_scale); }

/// Runs `f`, prefixing any library error with the stage name.
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

std::vector<double> row_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(row_vector(m.row(r).transpose()));
  return a;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace

void ExperimentConfig::validate() const {
  static const std::set<std::string> models{"gaussian", "gaussian_unknown_variance", "logistic", "poisson",
                                            "hierarchical", "gp"};
  if (!models.count(model)) throw config_error("unknown model '" + model + "'");
  if (beta && !(*beta > 0.0)) throw config_error("beta must be positive");
  if (search) search->validate();
  fit.validate();
  objective.validate();
  if (!(noise_variance > 0.0)) throw config_error("noise_variance must be positive");
  if (waic_samples < 2) throw config_error("waic_samples must be at least 2");
  if (hierarchical) hierarchical->validate();
  gp.kernel.validate();
  static const std::set<std::string> sources{"csv", "quadrants", "cubic", "linear", "two_regime",
                                             "smooth_curve", "aids", "telescope", "iq", "lidar"};
  if (!sources.count(data.source)) throw config_error("unknown data source '" + data.source + "'");
  if (data.source == "csv" && data.path.empty()) throw config_error("data.path is required for csv data");
  if (data.n < 1 || data.n_test < 0) throw config_error("data.n must be positive");
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, {"model", "noise_variance", "noise_variance_ls_factor", "prior", "beta", "beta_search", "fit",
                 "quad_order", "deterministic", "seed", "data", "gating", "hierarchical", "gp", "metrics",
                 "out_dir"},
             "config");
  ExperimentConfig c;
  c.model = get<std::string>(j, "model", c.model, "config");
  c.noise_variance = get<double>(j, "noise_variance", c.noise_variance, "config");
  c.noise_variance_ls_factor = get<double>(j, "noise_variance_ls_factor", 0.0, "config");
  if (j.contains("prior")) c.prior = parse_prior(j.at("prior"));
  if (j.contains("beta")) c.beta = get<double>(j, "beta", 1.0, "config");
  c.seed = get<std::uint64_t>(j, "seed", 0, "config");
  c.objective.quad_order = get<int>(j, "quad_order", c.objective.quad_order, "config");
  c.objective.deterministic = get<bool>(j, "deterministic", true, "config");
  c.out_dir = get<std::string>(j, "out_dir", ".", "config");

  c.fit.K_init = is_glm(c.model) ? 10 : 5;
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    check_keys(f, {"step_size", "adam_beta1", "adam_beta2", "adam_eps", "max_steps", "prune_interval",
                   "convergence_tol", "convergence_window", "K_init", "minibatch_size", "init_attempts"},
               "fit");
    c.fit.step_size = get<double>(f, "step_size", c.fit.step_size, "fit");
    c.fit.adam_beta1 = get<double>(f, "adam_beta1", c.fit.adam_beta1, "fit");
    c.fit.adam_beta2 = get<double>(f, "adam_beta2", c.fit.adam_beta2, "fit");
    c.fit.adam_eps = get<double>(f, "adam_eps", c.fit.adam_eps, "fit");
    c.fit.max_steps = get<int>(f, "max_steps", c.fit.max_steps, "fit");
    c.fit.prune_interval = get<int>(f, "prune_interval", c.fit.prune_interval, "fit");
    c.fit.convergence_tol = get<double>(f, "convergence_tol", c.fit.convergence_tol, "fit");
    c.fit.convergence_window = get<int>(f, "convergence_window", c.fit.convergence_window, "fit");
    c.fit.K_init = get<int>(f, "K_init", c.fit.K_init, "fit");
    c.fit.minibatch_size = get<int>(f, "minibatch_size", c.fit.minibatch_size, "fit");
    c.fit.init_attempts = get<int>(f, "init_attempts", c.fit.init_attempts, "fit");
  }

  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, {"fpr_targets", "waic_samples"}, "metrics");
    c.fpr_targets = get<std::vector<double>>(m, "fpr_targets", c.fpr_targets, "metrics");
    c.waic_samples = get<int>(m, "waic_samples", c.waic_samples, "metrics");
  }

  if (j.contains("beta_search")) {
    const json& b = j.at("beta_search");
    check_keys(b, {"mode", "grid", "bo_iters", "bo_initial", "lower", "upper", "waic_samples"}, "beta_search");
    BetaSearchConfig s;
    const auto mode = get<std::string>(b, "mode", "grid", "beta_search");
    if (mode == "grid")
      s.mode = BetaSearchConfig::Mode::grid;
    else if (mode == "bayes_opt")
      s.mode = BetaSearchConfig::Mode::bayes_opt;
    else
      throw config_error("beta_search.mode must be grid or bayes_opt");
    s.grid = get<std::vector<double>>(b, "grid", {}, "beta_search");
    s.bo_iters = get<int>(b, "bo_iters", s.bo_iters, "beta_search");
    s.bo_initial = get<int>(b, "bo_initial", s.bo_initial, "beta_search");
    s.lower = get<double>(b, "lower", s.lower, "beta_search");
    s.upper = get<double>(b, "upper", s.upper, "beta_search");
    s.waic_samples = get<int>(b, "waic_samples", c.waic_samples, "beta_search");
    c.search = s;
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"source", "path", "test_path", "n", "n_test", "train_fraction", "standardize", "response",
                   "covariates", "intercept", "standardize_response", "group", "time", "sigma2"},
               "data");
    c.data.source = get<std::string>(d, "source", c.data.source, "data");
    c.data.path = get<std::string>(d, "path", "", "data");
    c.data.test_path = get<std::string>(d, "test_path", "", "data");
    c.data.n = get<Eigen::Index>(d, "n", c.data.n, "data");
    c.data.n_test = get<Eigen::Index>(d, "n_test", c.data.n_test, "data");
    c.data.train_fraction = get<double>(d, "train_fraction", 0.0, "data");
    c.data.standardize = get<bool>(d, "standardize", false, "data");
    c.data.schema.response = get<std::string>(d, "response", "y", "data");
    c.data.schema.covariates = get<std::vector<std::string>>(d, "covariates", {}, "data");
    c.data.schema.add_intercept = get<bool>(d, "intercept", true, "data");
    c.data.schema.standardize_response = get<bool>(d, "standardize_response", false, "data");
    if (d.contains("group")) c.data.schema.group = get<std::string>(d, "group", "", "data");
    if (d.contains("time")) c.data.schema.time = get<std::string>(d, "time", "", "data");
    c.data.sim_sigma2 = get<double>(d, "sigma2", c.data.sim_sigma2, "data");
  }

  if (j.contains("gating")) {
    const json& g = j.at("gating");
    check_keys(g, {"mode", "columns"}, "gating");
    const auto mode = get<std::string>(g, "mode", "design", "gating");
    if (mode == "design")
      c.gating.mode = GatingSpec::Mode::design;
    else if (mode == "intercept")
      c.gating.mode = GatingSpec::Mode::intercept;
    else if (mode == "columns")
      c.gating.mode = GatingSpec::Mode::columns;
    else
      throw config_error("gating.mode must be design, intercept or columns");
    c.gating.columns = get<std::vector<int>>(g, "columns", {}, "gating");
  }

  if (j.contains("hierarchical")) {
    const json& h = j.at("hierarchical");
    check_keys(h, {"sigma2_a", "sigma2_b", "sigma2_eps", "prior_sd", "poly_degree"}, "hierarchical");
    const bool given = h.contains("sigma2_a") || h.contains("sigma2_b") || h.contains("sigma2_eps");
    if (given && !(h.contains("sigma2_a") && h.contains("sigma2_b") && h.contains("sigma2_eps")))
      throw config_error("hierarchical: give all of sigma2_a, sigma2_b, sigma2_eps or none");
    HierarchicalSpec s;
    s.prior_sd = get<double>(h, "prior_sd", s.prior_sd, "hierarchical");
    s.poly_degree = get<int>(h, "poly_degree", s.poly_degree, "hierarchical");
    if (given) {
      s.sigma2_a = get<double>(h, "sigma2_a", 1.0, "hierarchical");
      s.sigma2_b = get<double>(h, "sigma2_b", 1.0, "hierarchical");
      s.sigma2_eps = get<double>(h, "sigma2_eps", 1.0, "hierarchical");
      c.hierarchical = s;
    } else {
      // Variances come from the data; keep only the structural settings.
      if (h.contains("prior_sd") || h.contains("poly_degree")) {
        s.sigma2_a = s.sigma2_b = s.sigma2_eps = 0.0;
        c.hierarchical = s;
      }
    }
  }

  if (j.contains("gp")) {
    const json& g = j.at("gp");
    check_keys(g, {"length_scale", "signal_var", "jitter", "inducing", "init_noise", "prefit_steps"}, "gp");
    c.gp.kernel.length_scale = get<double>(g, "length_scale", c.gp.kernel.length_scale, "gp");
    c.gp.kernel.signal_var = get<double>(g, "signal_var", c.gp.kernel.signal_var, "gp");
    c.gp.kernel.jitter = get<double>(g, "jitter", c.gp.kernel.jitter, "gp");
    c.gp.inducing = get<int>(g, "inducing", c.gp.inducing, "gp");
    c.gp.init_noise = get<double>(g, "init_noise", c.gp.init_noise, "gp");
    c.gp.prefit_steps = get<int>(g, "prefit_steps", c.gp.prefit_steps, "gp");
  }
  c.fit.seed = c.seed;
  if (c.search) c.search->seed = c.seed;
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

PredictiveSummary predictive_summary(const LikelihoodModel& model, const MixturePosterior& post,
                                     const Eigen::VectorXd& x, const Eigen::VectorXd& gate,
                                     const QuadratureRule& quad) {
  const Eigen::VectorXd w = mixture_weights(post, gate);
  double m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < post.components(); ++k) {
    const Eigen::MatrixXd cov = post.factors()[k].covariance();
    const PredictorMoments pm = predictor_moments(model, x, post.means()[k], cov);
    double mean = 0.0, var = 0.0;
    switch (model.family) {
      case Family::gaussian_fixed:
        mean = pm.mean;
        var = pm.var + model.noise_variance;
        break;
      case Family::gaussian_unknown_variance:
        mean = pm.mean;
        var = pm.var + std::exp(pm.tau_mean + 0.5 * pm.tau_var);
        break;
      case Family::logistic: {
        const double s = std::sqrt(std::max(pm.var, 0.0));
        mean = quad.integrate([&](double z) { return 1.0 / (1.0 + std::exp(-(pm.mean + s * z))); });
        var = mean * (1.0 - mean);
        break;
      }
      case Family::poisson: {
        const double e1 = std::exp(pm.mean + 0.5 * pm.var);
        const double e2 = std::exp(2.0 * pm.mean + 2.0 * pm.var);
        mean = e1;
        var = e1 + e2 - e1 * e1;
        break;
      }
    }
    m1 += w(k) * mean;
    m2 += w(k) * (var + mean * mean);
  }
  return {m1, std::max(m2 - m1 * m1, 0.0)};
}

LikelihoodModel experiment_likelihood(const ExperimentConfig& cfg, const Dataset& train) {
  double s2 = cfg.noise_variance;
  if (cfg.noise_variance_ls_factor > 0.0) s2 = cfg.noise_variance_ls_factor * least_squares_variance(train);
  return LikelihoodModel::from_name(cfg.model, s2);
}

std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset train, test;
  double fraction = d.train_fraction;
  bool standardize_x = d.standardize;
  auto path_or = [&](const char* fallback) { return d.path.empty() ? std::filesystem::path(fallback) : d.path; };
  const std::uint64_t test_seed = derived_seed(cfg.seed, 0x7e57);

  if (d.source == "csv") {
    train = load_csv(d.path, d.schema);
    if (!d.test_path.empty()) {
      test = load_csv(d.test_path, d.schema);
      fraction = 0.0;
    }
  } else if (d.source == "quadrants") {
    train = simulate_logistic_quadrants(d.n, cfg.seed);
    if (d.n_test > 0) test = simulate_logistic_quadrants(d.n_test, test_seed);
  } else if (d.source == "cubic") {
    train = simulate_cubic(d.n, cfg.seed, d.sim_sigma2);
    if (d.n_test > 0) test = simulate_cubic(d.n_test, test_seed, d.sim_sigma2);
  } else if (d.source == "linear") {
    const Eigen::Vector2d theta(0.5, -1.0);
    train = simulate_linear(d.n, cfg.seed, theta, d.sim_sigma2);
    if (d.n_test > 0) test = simulate_linear(d.n_test, test_seed, theta, d.sim_sigma2);
  } else if (d.source == "aids") {
    train = aids_dataset(path_or("data/aids_uk_quarterly.csv"));
  } else if (d.source == "telescope") {
    train = telescope_dataset(path_or("data/magic04.data"));
    if (!(fraction > 0.0 && fraction < 1.0)) fraction = 2.0 / 3.0;
    standardize_x = true;
  } else if (d.source == "iq") {
    train = iq_dataset(path_or("data/kidiq.csv"));
    if (!(fraction > 0.0 && fraction < 1.0)) fraction = 0.8;
  } else {
    throw config_error("data source '" + d.source + "' is not a regression data set");
  }

  if (fraction > 0.0 && fraction < 1.0 && test.size() == 0) {
    const TrainTestSplit s = split_indices(train.size(), fraction, cfg.seed);
    test = take_rows(train, s.test);
    train = take_rows(train, s.train);
  }
  if (standardize_x || d.schema.standardize_response) {
    standardize(train, d.schema.standardize_response);
    if (test.size() > 0) apply_standardization(test, train.standardization);
  }
  return {std::move(train), std::move(test)};
}

namespace {

/// Grid of design rows for figures: one or two free covariates next to an
/// optional intercept; otherwise empty.
struct Grid {
  Eigen::MatrixXd X;
  std::vector<int> free;
};

Grid figure_grid(const Dataset& train) {
  Grid g;
  std::vector<int> intercept;
  for (Eigen::Index c = 0; c < train.X.cols(); ++c) {
    if ((train.X.col(c).array() == 1.0).all())
      intercept.push_back(static_cast<int>(c));
    else
      g.free.push_back(static_cast<int>(c));
  }
  if (g.free.empty() || g.free.size() > 2) {
    g.free.clear();
    return g;
  }
  const int per_axis = g.free.size() == 1 ? 201 : 41;
  const auto rows = static_cast<Eigen::Index>(g.free.size() == 1 ? per_axis : per_axis * per_axis);
  g.X = Eigen::MatrixXd::Zero(rows, train.X.cols());
  for (const int c : intercept) g.X.col(c).setOnes();
  auto axis = [&](int c, int i) {
    const double lo = train.X.col(c).minCoeff(), hi = train.X.col(c).maxCoeff();
    return lo + (hi - lo) * i / (per_axis - 1);
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    g.X(r, g.free[0]) = axis(g.free[0], static_cast<int>(r % per_axis));
    if (g.free.size() == 2) g.X(r, g.free[1]) = axis(g.free[1], static_cast<int>(r / per_axis));
  }
  return g;
}

ExperimentOutput run_glm(const ExperimentConfig& cfg) {
  auto [train, test] = stage("load", [&] { return load_experiment_data(cfg); });
  const LikelihoodModel model = stage("load", [&] {
    const LikelihoodModel m = experiment_likelihood(cfg, train);
    validate_response(m, train.y);
    if (test.size() > 0) validate_response(m, test.y);
    return m;
  });
  ExperimentOutput out;
  std::unique_ptr<GlmProblem> problem;
  if (cfg.search && !cfg.beta) {
    const BetaSelection sel = stage("select-beta", [&] {
      return select_beta(model, cfg.prior, train, *cfg.search, cfg.fit, cfg.objective, cfg.gating);
    });
    out.fit = sel.fit;
    out.beta_table = sel.table;
  } else {
    out.fit = stage("fit", [&] {
      ObjectiveConfig oc = cfg.objective;
      oc.beta = cfg.beta.value_or(1.0);
      return fit(model, cfg.prior, train, oc, cfg.fit, cfg.gating);
    });
  }
  const QuadratureRule quad = gauss_hermite_rule(cfg.objective.quad_order);
  const MixturePosterior& post = out.fit.posterior;
  const Eigen::MatrixXd gate_train = cfg.gating.apply(train.X);

  stage("evaluate", [&] {
    MetricReport& m = out.metrics;
    m.beta = out.fit.beta;
    m.K = out.fit.components;
    m.waic = waic(model, averaged_posterior(post, gate_train), train, cfg.waic_samples,
                  derived_seed(cfg.seed, 0xa1c));
    m.llpd = std::numeric_limits<double>::quiet_NaN();
    if (test.size() > 0) {
      const Eigen::MatrixXd gate_test = cfg.gating.apply(test.X);
      m.llpd = llpd(model, post, test, quad, &gate_test) - mean_y_scale_log(train);
      if (model.family == Family::logistic) {
        const Eigen::VectorXd p = predict_probabilities(post, test.X, quad, &gate_test);
        const MetricReport r = roc_and_tpr(p, test.y, cfg.fpr_targets);
        m.roc = r.roc;
        m.tpr_at_fpr = r.tpr_at_fpr;
      }
    }
    return 0;
  });

  stage("write", [&] {
    std::filesystem::create_directories(cfg.out_dir);
    auto add = [&](const std::string& name) {
      out.files.push_back(cfg.out_dir / name);
      return cfg.out_dir / name;
    };
    nlohmann::ordered_json fj = to_json(out.fit);
    fj["model"] = {{"name", model.name()}, {"noise_variance", model.noise_variance}};
    write_json(add("fit.json"), fj);
    write_trace_csv(add("trace.csv"), out.fit);
    write_json(add("metrics.json"), to_json(out.metrics));
    if (!out.metrics.roc.fpr.empty()) write_roc_csv(add("roc.csv"), out.metrics.roc);
    if (!out.beta_table.empty()) {
      std::vector<std::vector<double>> rows;
      for (const auto& e : out.beta_table)
        rows.push_back({e.beta, e.ok ? e.waic : std::numeric_limits<double>::quiet_NaN(), double(e.K), e.ok ? 1.0 : 0.0});
      write_csv(add("beta_table.csv"), {"beta", "waic", "K", "ok"}, rows);
    }

    // Predictive and weight functions on a covariate grid, or at the data rows.
    const Grid g = figure_grid(train);
    const bool on_grid = !g.free.empty();
    const Eigen::MatrixXd& Xg = on_grid ? g.X : train.X;
    std::vector<std::string> header;
    if (on_grid)
      for (const int c : g.free) header.push_back(c < static_cast<int>(train.columns.size()) ? train.columns[c] : "x" + std::to_string(c));
    else
      header.push_back("row");
    std::vector<std::string> ph = header, wh = header;
    ph.insert(ph.end(), {"mean", "sd", "dominant_component"});
    for (int k = 0; k < post.components(); ++k) wh.push_back("w" + std::to_string(k + 1));
    std::vector<std::vector<double>> prow, wrow;
    const double ys = train.standardization.y_scale, ym = train.standardization.y_mean;
    const Standardization& st = train.standardization;
    auto unscale = [&](int c, double v) { return c < st.scale.size() ? st.mean(c) + st.scale(c) * v : v; };
    for (Eigen::Index r = 0; r < Xg.rows(); ++r) {
      const Eigen::VectorXd x = Xg.row(r).transpose();
      const Eigen::VectorXd z = cfg.gating.apply_row(x);
      const Eigen::VectorXd w = mixture_weights(post, z);
      Eigen::Index dom = 0;
      w.maxCoeff(&dom);
      std::vector<double> lead;
      if (on_grid)
        for (const int c : g.free) lead.push_back(unscale(c, x(c)));
      else
        lead.push_back(static_cast<double>(r));
      const PredictiveSummary s = predictive_summary(model, post, x, z, quad);
      std::vector<double> pr = lead;
      pr.insert(pr.end(), {ym + ys * s.mean, ys * std::sqrt(s.variance), static_cast<double>(dom)});
      prow.push_back(std::move(pr));
      std::vector<double> wr = lead;
      for (Eigen::Index k = 0; k < w.size(); ++k) wr.push_back(w(k));
      wrow.push_back(std::move(wr));
    }
    write_csv(add("predictive_grid.csv"), ph, prow);
    write_csv(add("weights_grid.csv"), wh, wrow);

    std::vector<std::vector<double>> crow;
    const Eigen::MatrixXd W = mixture_weights(post, gate_train);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      Eigen::Index dom = 0;
      W.row(i).maxCoeff(&dom);
      crow.push_back({static_cast<double>(i), static_cast<double>(dom)});
    }
    write_csv(add("cluster_map.csv"), {"row", "component"}, crow);
    return 0;
  });
  return out;
}

ExperimentOutput run_hierarchical(const ExperimentConfig& cfg) {
  if (cfg.data.source != "csv") throw config_error("hierarchical model needs csv data (time, group, y)");
  const HierarchicalData train = stage("load", [&] { return load_hierarchical_csv(cfg.data.path); });
  const std::optional<HierarchicalData> test = stage("load", [&]() -> std::optional<HierarchicalData> {
    if (cfg.data.test_path.empty()) return std::nullopt;
    return load_hierarchical_csv(cfg.data.test_path, &train);
  });
  HierarchicalSpec spec = stage("load", [&] {
    if (cfg.hierarchical && cfg.hierarchical->sigma2_eps > 0.0) return *cfg.hierarchical;
    const int degree = cfg.hierarchical ? cfg.hierarchical->poly_degree : 3;
    const double sd = cfg.hierarchical ? cfg.hierarchical->prior_sd : 100.0;
    return moment_variances(train, degree, sd);
  });

  ExperimentOutput out;
  auto make = [&](double beta) {
    ObjectiveConfig oc = cfg.objective;
    oc.beta = beta;
    return std::make_unique<HierarchicalProblem>(spec, train, oc);
  };
  if (cfg.search && !cfg.beta) {
    const BetaSelection sel = stage("select-beta", [&] {
      return select_beta(
          [&](double b) -> std::unique_ptr<PviProblem> { return make(b); },
          [&](const PviProblem& p, const FitResult& r) {
            return hierarchical_waic(static_cast<const HierarchicalProblem&>(p), r.posterior,
                                     cfg.search->waic_samples, cfg.seed);
          },
          *cfg.search, cfg.fit);
    });
    out.fit = sel.fit;
    out.beta_table = sel.table;
  } else {
    out.fit = stage("fit", [&] { return fit(*make(cfg.beta.value_or(1.0)), cfg.fit); });
  }
  const auto problem = make(out.fit.beta);
  const MixturePosterior& post = out.fit.posterior;

  stage("evaluate", [&] {
    out.metrics.beta = out.fit.beta;
    out.metrics.K = out.fit.components;
    out.metrics.waic = hierarchical_waic(*problem, post, cfg.waic_samples, derived_seed(cfg.seed, 0xa1c));
    out.metrics.llpd = std::numeric_limits<double>::quiet_NaN();
    if (test) {
      double s = 0.0;
      for (int i = 0; i < test->n_times(); ++i)
        s += hierarchical_predictive(spec, post, train.n_groups(), test->times(i), test->groups[i]).log_density(test->y[i]);
      out.metrics.llpd = s / test->n_times();
    }
    return 0;
  });

  stage("write", [&] {
    std::filesystem::create_directories(cfg.out_dir);
    auto add = [&](const std::string& name) {
      out.files.push_back(cfg.out_dir / name);
      return cfg.out_dir / name;
    };
    const HierarchicalPosterior hp = HierarchicalPosterior::from_parameters(*problem, out.fit.parameters, out.fit.components);
    nlohmann::ordered_json fj = to_json(out.fit);
    fj["model"] = {{"name", "hierarchical"},
                   {"sigma2_a", spec.sigma2_a},
                   {"sigma2_b", spec.sigma2_b},
                   {"sigma2_eps", spec.sigma2_eps},
                   {"poly_degree", spec.poly_degree},
                   {"prior_sd", spec.prior_sd},
                   {"time_min", train.time_min},
                   {"time_max", train.time_max},
                   {"group_labels", train.group_labels},
                   {"local_means", row_vector(hp.local_means)},
                   {"local_vars", row_vector(hp.local_vars)}};
    write_json(add("fit.json"), fj);
    write_trace_csv(add("trace.csv"), out.fit);
    write_json(add("metrics.json"), to_json(out.metrics));
    if (!out.beta_table.empty()) {
      std::vector<std::vector<double>> rows;
      for (const auto& e : out.beta_table)
        rows.push_back({e.beta, e.ok ? e.waic : std::numeric_limits<double>::quiet_NaN(), double(e.K), e.ok ? 1.0 : 0.0});
      write_csv(add("beta_table.csv"), {"beta", "waic", "K", "ok"}, rows);
    }
    const double span = train.time_max - train.time_min;
    std::vector<std::vector<double>> prow;
    for (int g = 0; g <= 200; ++g) {
      const double t = g / 200.0;
      const StackedPredictive p = hierarchical_predictive(spec, post, train.n_groups(), t);
      for (int j = 0; j < train.n_groups(); ++j)
        prow.push_back({train.time_min + span * t, static_cast<double>(train.group_labels[static_cast<std::size_t>(j)]),
                        p.mean(j), std::sqrt(p.variance(j)), static_cast<double>(p.dominant())});
    }
    write_csv(add("predictive.csv"), {"time", "group", "mean", "sd", "dominant_component"}, prow);
    const std::vector<int> cm = cluster_map(post, train.times, spec.poly_degree);
    std::vector<std::vector<double>> crow;
    for (int i = 0; i < train.n_times(); ++i)
      crow.push_back({train.time_min + span * train.times(i), static_cast<double>(cm[static_cast<std::size_t>(i)])});
    write_csv(add("cluster_map.csv"), {"time", "component"}, crow);
    return 0;
  });
  return out;
}

ExperimentOutput run_gp(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset train, test;
  stage("load", [&] {
    if (d.source == "lidar") {
      train = lidar_dataset(d.path.empty() ? std::filesystem::path("data/lidar.dat") : d.path);
    } else if (d.source == "two_regime") {
      train = simulate_two_regime(d.n, cfg.seed);
      if (d.n_test > 0) test = simulate_two_regime(d.n_test, derived_seed(cfg.seed, 0x7e57));
    } else if (d.source == "smooth_curve") {
      train = simulate_smooth_curve(d.n, cfg.seed);
    } else if (d.source == "csv") {
      CsvSchema s = d.schema;
      s.add_intercept = false;
      train = load_csv(d.path, s);
      if (!d.test_path.empty()) test = load_csv(d.test_path, s);
    } else {
      throw config_error("data source '" + d.source + "' is not usable with the gp model");
    }
    if (train.covariates() < 1) throw data_error("gp model needs at least one covariate");
    if (d.train_fraction > 0.0 && d.train_fraction < 1.0 && test.size() == 0) {
      const TrainTestSplit s = split_indices(train.size(), d.train_fraction, cfg.seed);
      test = train.rows(s.test);
      train = train.rows(s.train);
    }
    standardize(train, true);
    if (test.size() > 0) apply_standardization(test, train.standardization);
    return 0;
  });

  GpConfig gcfg = cfg.gp;
  gcfg.objective = cfg.objective;
  const Eigen::MatrixXd Z = gp_inducing_points(train.X, gcfg, cfg.seed);
  const double noise0 = stage("fit", [&] { return gp_initial_noise(train.X, train.y, Z, gcfg, cfg.fit); });
  auto make = [&](double beta) {
    ObjectiveConfig oc = cfg.objective;
    oc.beta = beta;
    return std::make_unique<GpProblem>(train.X, train.y, Z, gcfg.kernel, oc, noise0);
  };
  ExperimentOutput out;
  if (cfg.search && !cfg.beta) {
    const BetaSelection sel = stage("select-beta", [&] {
      return select_beta(
          [&](double b) -> std::unique_ptr<PviProblem> { return make(b); },
          [&](const PviProblem& p, const FitResult& r) {
            return static_cast<const GpProblem&>(p).waic(r.parameters, r.components, cfg.search->waic_samples,
                                                         cfg.seed);
          },
          *cfg.search, cfg.fit);
    });
    out.fit = sel.fit;
    out.beta_table = sel.table;
  } else {
    out.fit = stage("fit", [&] { return fit(*make(cfg.beta.value_or(1.0)), cfg.fit); });
  }
  const auto problem = make(out.fit.beta);
  const InducingPosterior post = problem->posterior(out.fit.parameters, out.fit.components);

  stage("evaluate", [&] {
    out.metrics.beta = out.fit.beta;
    out.metrics.K = out.fit.components;
    out.metrics.waic = problem->waic(out.fit.parameters, out.fit.components, cfg.waic_samples,
                                     derived_seed(cfg.seed, 0xa1c));
    out.metrics.llpd = std::numeric_limits<double>::quiet_NaN();
    if (test.size() > 0) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < test.size(); ++i)
        s += gp_predictive(post, gcfg.kernel, test.X.row(i).transpose()).log_density(test.y(i));
      out.metrics.llpd = s / static_cast<double>(test.size()) - mean_y_scale_log(train);
    }
    return 0;
  });

  stage("write", [&] {
    std::filesystem::create_directories(cfg.out_dir);
    auto add = [&](const std::string& name) {
      out.files.push_back(cfg.out_dir / name);
      return cfg.out_dir / name;
    };
    const Standardization& st = train.standardization;
    nlohmann::ordered_json fj = to_json(out.fit);
    fj["model"] = {{"name", "gp"},
                   {"length_scale", gcfg.kernel.length_scale},
                   {"signal_var", gcfg.kernel.signal_var},
                   {"jitter", gcfg.kernel.jitter},
                   {"noise", row_vector(post.noise)},
                   {"inducing", matrix_json(post.Z)},
                   {"x_mean", row_vector(st.mean)},
                   {"x_scale", row_vector(st.scale)},
                   {"y_mean", st.y_mean},
                   {"y_scale", st.y_scale}};
    write_json(add("fit.json"), fj);
    write_trace_csv(add("trace.csv"), out.fit);
    write_json(add("metrics.json"), to_json(out.metrics));
    if (!out.beta_table.empty()) {
      std::vector<std::vector<double>> rows;
      for (const auto& e : out.beta_table)
        rows.push_back({e.beta, e.ok ? e.waic : std::numeric_limits<double>::quiet_NaN(), double(e.K), e.ok ? 1.0 : 0.0});
      write_csv(add("beta_table.csv"), {"beta", "waic", "K", "ok"}, rows);
    }
    if (train.covariates() == 1) {
      const double lo = train.X.col(0).minCoeff(), hi = train.X.col(0).maxCoeff();
      Eigen::VectorXd grid(201);
      for (int g = 0; g <= 200; ++g) grid(g) = lo + (hi - lo) * g / 200.0;
      auto rows = gp_quantile_rows(post, gcfg.kernel, grid);
      std::vector<std::vector<double>> wrow;
      for (auto& r : rows) {
        const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, r[0]);
        const Eigen::VectorXd w = mixture_weights(post.mixture, gp_gating_row(x));
        r[0] = st.mean(0) + st.scale(0) * r[0];
        for (std::size_t q = 1; q < r.size(); ++q) r[q] = st.y_mean + st.y_scale * r[q];
        std::vector<double> wr{r[0]};
        for (Eigen::Index k = 0; k < w.size(); ++k) wr.push_back(w(k));
        wrow.push_back(std::move(wr));
      }
      write_csv(add("quantiles.csv"), {"x", "q01", "q05", "q25", "q50", "q75", "q95", "q99"}, rows);
      std::vector<std::string> wh{"x"};
      for (int k = 0; k < post.mixture.components(); ++k) wh.push_back("w" + std::to_string(k + 1));
      write_csv(add("weights_grid.csv"), wh, wrow);
    }
    return 0;
  });
  return out;
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.model == "hierarchical") return run_hierarchical(cfg);
  if (cfg.model == "gp") return run_gp(cfg);
  return run_glm(cfg);
}

}  // namespace gmpvi
