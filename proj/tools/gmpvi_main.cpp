#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "fetch.hpp"
#include "gmpvi/error.hpp"
#include "gmpvi/experiment.hpp"
#include "gmpvi/simulate.hpp"

namespace {

using namespace gmpvi;

struct CommonFlags {
  std::string config;
  std::string model;
  std::string data;
  std::string test;
  std::optional<double> beta;
  std::string beta_grid;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool deterministic = false;
  std::optional<int> quad_order;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment configuration");
  cmd->add_option("--model", f.model, "gaussian | gaussian_unknown_variance | logistic | poisson | hierarchical | gp");
  cmd->add_option("--data", f.data, "training CSV (overrides the configured source)");
  cmd->add_option("--test", f.test, "held-out CSV");
  cmd->add_option("--beta", f.beta, "penalty weight");
  cmd->add_option("--beta-grid", f.beta_grid, "comma-separated beta values to compare by WAIC");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  cmd->add_flag("--deterministic", f.deterministic, "fixed-order reductions");
  cmd->add_option("--quad-order", f.quad_order, "Gauss-Hermite nodes per integral");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw config_error("--beta-grid: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw config_error("--beta-grid is empty");
  return out;
}

ExperimentConfig build_config(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? experiment_config_from_json(nlohmann::json::object())
                                        : load_experiment_config(f.config);
  if (!f.model.empty()) {
    c.model = f.model;
    if (f.config.empty()) c.fit.K_init = (c.model == "hierarchical" || c.model == "gp") ? 5 : 10;
  }
  if (!f.data.empty()) {
    c.data.source = "csv";
    c.data.path = f.data;
  }
  if (!f.test.empty()) c.data.test_path = f.test;
  if (f.seed) {
    c.seed = *f.seed;
    c.fit.seed = *f.seed;
    if (c.search) c.search->seed = *f.seed;
  }
  if (!f.out_dir.empty()) c.out_dir = f.out_dir;
  if (f.deterministic) c.objective.deterministic = true;
  if (f.quad_order) c.objective.quad_order = *f.quad_order;
  if (f.beta) c.beta = *f.beta;
  if (!f.beta_grid.empty()) {
    BetaSearchConfig s = c.search.value_or(BetaSearchConfig{});
    s.mode = BetaSearchConfig::Mode::grid;
    s.grid = parse_grid(f.beta_grid);
    s.seed = c.seed;
    c.search = s;
  }
  return c;
}

void print_metrics(const MetricReport& m) { std::cout << to_json(m).dump(2) << "\n"; }

int cmd_fit(const CommonFlags& f) {
  ExperimentConfig c = build_config(f);
  c.search.reset();
  if (!c.beta) c.beta = 1.0;
  const ExperimentOutput out = run_experiment(c);
  print_metrics(out.metrics);
  return 0;
}

int cmd_select_beta(const CommonFlags& f) {
  ExperimentConfig c = build_config(f);
  if (f.beta) throw config_error("select-beta does not take --beta; use --beta-grid");
  c.beta.reset();
  if (!c.search) {
    BetaSearchConfig s;
    s.mode = BetaSearchConfig::Mode::bayes_opt;
    s.seed = c.seed;
    c.search = s;
  }
  const ExperimentOutput out = run_experiment(c);
  for (const auto& e : out.beta_table) {
    char line[160];
    std::snprintf(line, sizeof line, "beta=%.17g waic=%.17g K=%d%s%s", e.beta, e.waic, e.K,
                  e.ok ? "" : " failed: ", e.note.c_str());
    std::cout << line << "\n";
  }
  print_metrics(out.metrics);
  return 0;
}

MixturePosterior load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open fit file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
  if (!j.contains("posterior")) throw config_error(path + ": no posterior");
  if (j.contains("model") && j["model"].contains("name")) {
    const std::string name = j["model"]["name"].get<std::string>();
    if (name == "hierarchical" || name == "gp")
      throw config_error("predict and eval read GLM fits only; " + name + " fits write their predictive CSVs at fit time");
  }
  return mixture_from_json(j["posterior"]);
}

int cmd_predict(const CommonFlags& f, const std::string& fit_path) {
  const ExperimentConfig c = build_config(f);
  if (c.model == "hierarchical" || c.model == "gp") throw config_error("predict supports GLM models only");
  const MixturePosterior post = load_fit(fit_path);
  auto [train, test] = load_experiment_data(c);
  if (test.size() == 0) throw config_error("predict needs rows to predict: give --test or a split");
  const LikelihoodModel model = experiment_likelihood(c, train);
  const QuadratureRule quad = gauss_hermite_rule(c.objective.quad_order);
  if (post.dim() != model.parameter_dim(test.covariates()))
    throw data_error("fit dimension does not match the design");
  const double ys = train.standardization.y_scale, ym = train.standardization.y_mean;
  std::vector<std::string> header{"row", "mean", "sd"};
  for (int k = 0; k < post.components(); ++k) header.push_back("w" + std::to_string(k + 1));
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Eigen::VectorXd x = test.X.row(i).transpose();
    const Eigen::VectorXd z = c.gating.apply_row(x);
    const PredictiveSummary s = predictive_summary(model, post, x, z, quad);
    std::vector<double> r{static_cast<double>(i), ym + ys * s.mean, ys * std::sqrt(s.variance)};
    const Eigen::VectorXd w = mixture_weights(post, z);
    for (Eigen::Index k = 0; k < w.size(); ++k) r.push_back(w(k));
    rows.push_back(std::move(r));
  }
  std::filesystem::create_directories(c.out_dir);
  write_csv(c.out_dir / "predictions.csv", header, rows);
  std::cout << (c.out_dir / "predictions.csv").string() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& fit_path) {
  const ExperimentConfig c = build_config(f);
  if (c.model == "hierarchical" || c.model == "gp") throw config_error("eval supports GLM models only");
  const MixturePosterior post = load_fit(fit_path);
  auto [train, test] = load_experiment_data(c);
  if (test.size() == 0) throw config_error("eval needs held-out rows: give --test or a split");
  const LikelihoodModel model = experiment_likelihood(c, train);
  validate_response(model, test.y);
  if (post.dim() != model.parameter_dim(test.covariates()))
    throw data_error("fit dimension does not match the design");
  const QuadratureRule quad = gauss_hermite_rule(c.objective.quad_order);
  const Eigen::MatrixXd gate_train = c.gating.apply(train.X);
  const Eigen::MatrixXd gate_test = c.gating.apply(test.X);
  MetricReport m;
  m.K = post.components();
  m.beta = c.beta.value_or(std::numeric_limits<double>::quiet_NaN());
  m.llpd = llpd(model, post, test, quad, &gate_test) - std::log(train.standardization.y_scale);
  m.waic = waic(model, averaged_posterior(post, gate_train), train, c.waic_samples, c.seed);
  if (model.family == Family::logistic) {
    const MetricReport r = roc_and_tpr(predict_probabilities(post, test.X, quad, &gate_test), test.y, c.fpr_targets);
    m.roc = r.roc;
    m.tpr_at_fpr = r.tpr_at_fpr;
  }
  std::filesystem::create_directories(c.out_dir);
  write_text_atomic(c.out_dir / "metrics.json", to_json(m).dump(2) + "\n");
  if (!m.roc.fpr.empty()) write_roc_csv(c.out_dir / "roc.csv", m.roc);
  print_metrics(m);
  return 0;
}

int cmd_simulate(const std::string& kind, Eigen::Index n, std::uint64_t seed, double sigma2,
                 const std::string& output) {
  if (n < 1) throw config_error("--n must be at least 1");
  Dataset d;
  if (kind == "quadrants")
    d = simulate_logistic_quadrants(n, seed);
  else if (kind == "cubic")
    d = simulate_cubic(n, seed, sigma2);
  else if (kind == "linear")
    d = simulate_linear(n, seed, Eigen::Vector2d(0.5, -1.0), sigma2);
  else if (kind == "two_regime")
    d = simulate_two_regime(n, seed);
  else if (kind == "smooth_curve")
    d = simulate_smooth_curve(n, seed);
  else
    throw config_error("unknown --kind '" + kind + "'");
  std::vector<std::string> header;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
    if (d.columns[static_cast<std::size_t>(c)] == "intercept") continue;
    header.push_back(d.columns[static_cast<std::size_t>(c)]);
    cols.push_back(c);
  }
  header.push_back("y");
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    std::vector<double> r;
    for (const Eigen::Index c : cols) r.push_back(d.X(i, c));
    r.push_back(d.y(i));
    rows.push_back(std::move(r));
  }
  write_csv(output, header, rows);
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive variational inference with Gaussian-mixture posteriors"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string fit_path;
  auto* fit = app.add_subcommand("fit", "fit at a fixed beta and evaluate");
  auto* select = app.add_subcommand("select-beta", "choose beta by WAIC, then fit and evaluate");
  auto* predict = app.add_subcommand("predict", "predictive mean, sd and gating weights from a saved fit");
  auto* eval = app.add_subcommand("eval", "held-out metrics for a saved fit");
  for (auto* c : {fit, select, predict, eval}) add_common(c, flags);
  for (auto* c : {predict, eval}) c->add_option("--fit", fit_path, "fit.json written by fit")->required();

  std::string kind = "quadrants", output;
  Eigen::Index n = 1000;
  std::uint64_t sim_seed = 0;
  double sigma2 = 0.1;
  auto* sim = app.add_subcommand("simulate", "write a simulated data set as CSV");
  sim->add_option("--kind", kind, "quadrants | cubic | linear | two_regime | smooth_curve");
  sim->add_option("--n", n, "rows");
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--sigma2", sigma2, "noise variance for cubic and linear");
  sim->add_option("--output", output, "CSV path")->required();

  std::string dataset, data_dir = "data", expected;
  auto* fetch = app.add_subcommand("fetch-data", "download a public data set into the cache");
  fetch->add_option("dataset", dataset, "telescope | lidar")->required();
  fetch->add_option("--dir", data_dir, "cache directory");
  fetch->add_option("--sha256", expected, "expected SHA-256 of the file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit) return cmd_fit(flags);
    if (*select) return cmd_select_beta(flags);
    if (*predict) return cmd_predict(flags, fit_path);
    if (*eval) return cmd_eval(flags, fit_path);
    if (*sim) return cmd_simulate(kind, n, sim_seed, sigma2, output);
    if (*fetch) {
      const gmpvi::tools::FetchResult r = gmpvi::tools::fetch_dataset(dataset, data_dir, expected);
      std::cout << r.path.string() << " sha256=" << r.sha256 << (r.downloaded ? " (downloaded)" : " (cached)")
                << "\n";
      return 0;
    }
  } catch (const gmpvi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
