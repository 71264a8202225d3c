#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gmpvi/error.hpp"
#include "gmpvi/experiment.hpp"
#include "gmpvi/simulate.hpp"
#include "support/oracles.hpp"

using namespace gmpvi;
using json = nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("gmpvi_exp_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(ExperimentConfig, ParsesAndDefaults) {
  const json j = json::parse(R"({
    "model": "logistic", "prior": {"sd": 2.5}, "seed": 4,
    "beta_search": {"mode": "grid", "grid": [0.01, 1]},
    "fit": {"max_steps": 100}, "quad_order": 10,
    "data": {"source": "quadrants", "n": 50, "n_test": 20},
    "metrics": {"fpr_targets": [0.05]}
  })");
  const ExperimentConfig c = experiment_config_from_json(j);
  EXPECT_EQ(c.model, "logistic");
  EXPECT_EQ(c.prior.variance, 6.25);
  EXPECT_EQ(c.fit.K_init, 10);
  EXPECT_EQ(c.fit.max_steps, 100);
  EXPECT_EQ(c.fit.seed, 4u);
  EXPECT_EQ(c.objective.quad_order, 10);
  ASSERT_TRUE(c.search.has_value());
  EXPECT_EQ(c.search->grid.size(), 2u);
  EXPECT_FALSE(c.beta.has_value());
  EXPECT_EQ(c.data.n, 50);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(experiment_config_from_json(json{{"model", "gp"}}).fit.K_init, 5);
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadValues) {
  auto kind = [](const json& j) {
    try {
      experiment_config_from_json(j).validate();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::numerical;
  };
  EXPECT_EQ(kind(json{{"modle", "gaussian"}}), ErrorKind::config);
  EXPECT_EQ(kind(json{{"fit", {{"steps", 1}}}}), ErrorKind::config);
  EXPECT_EQ(kind(json{{"model", "probit"}}), ErrorKind::config);
  EXPECT_EQ(kind(json{{"beta", -1}}), ErrorKind::config);
  EXPECT_EQ(kind(json{{"fit", {{"max_steps", "ten"}}}}), ErrorKind::config);
  EXPECT_EQ(kind(json{{"data", {{"source", "csv"}}}}), ErrorKind::config);
}

TEST(Experiment, PredictiveSummaryGaussian) {
  const Eigen::Vector2d mu(0.5, -1.0);
  const Eigen::Matrix2d S = (Eigen::Matrix2d() << 0.2, 0.05, 0.05, 0.1).finished();
  const MixturePosterior post({mu}, {cov_to_chol(S)}, Eigen::MatrixXd(0, 2));
  const Eigen::Vector2d x(1.0, 0.7);
  const PredictiveSummary s =
      predictive_summary(LikelihoodModel::gaussian(0.3), post, x, x, gauss_hermite_rule(20));
  EXPECT_NEAR(s.mean, x.dot(mu), 1e-12);
  EXPECT_NEAR(s.variance, x.dot(S * x) + 0.3, 1e-12);
  const PredictiveSummary p = predictive_summary(LikelihoodModel::poisson(), post, x, x, gauss_hermite_rule(20));
  EXPECT_NEAR(p.mean, std::exp(x.dot(mu) + 0.5 * x.dot(S * x)), 1e-12);
}

TEST(Experiment, GlmRunWritesOutputs) {
  ExperimentConfig c = experiment_config_from_json(json::parse(R"({
    "model": "gaussian", "noise_variance": 0.1, "prior": {"sd": 10}, "beta": 0.05, "seed": 2,
    "fit": {"max_steps": 300, "K_init": 3, "prune_interval": 100},
    "data": {"source": "cubic", "n": 60, "n_test": 40},
    "metrics": {"waic_samples": 100}
  })"));
  c.out_dir = fresh_dir("glm");
  const ExperimentOutput out = run_experiment(c);
  EXPECT_TRUE(std::isfinite(out.metrics.llpd));
  EXPECT_EQ(out.metrics.K, out.fit.components);
  for (const char* f : {"fit.json", "trace.csv", "metrics.json", "predictive_grid.csv", "weights_grid.csv",
                        "cluster_map.csv"})
    EXPECT_TRUE(std::filesystem::exists(c.out_dir / f)) << f;
  const CsvTable w = read_csv_table(c.out_dir / "weights_grid.csv");
  ASSERT_EQ(w.rows.size(), 201u);
  for (const auto& r : w.rows) {
    double s = 0;
    for (std::size_t k = 1; k < r.size(); ++k) s += r[k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  std::ifstream in(c.out_dir / "metrics.json");
  const json m = json::parse(in);
  EXPECT_EQ(m["K"].get<int>(), out.metrics.K);
  EXPECT_EQ(m["llpd"].get<double>(), out.metrics.llpd);
  std::filesystem::remove_all(c.out_dir);
}

TEST(Experiment, LogisticGridSelectionWritesRoc) {
  ExperimentConfig c = experiment_config_from_json(json::parse(R"({
    "model": "logistic", "prior": {"sd": 2.5}, "seed": 1,
    "beta_search": {"mode": "grid", "grid": [0.1, 10], "waic_samples": 100},
    "fit": {"max_steps": 200, "K_init": 2},
    "data": {"source": "quadrants", "n": 80, "n_test": 200},
    "metrics": {"waic_samples": 100}
  })"));
  c.out_dir = fresh_dir("logit");
  const ExperimentOutput out = run_experiment(c);
  EXPECT_EQ(out.beta_table.size(), 2u);
  EXPECT_EQ(out.metrics.tpr_at_fpr.size(), 5u);
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "roc.csv"));
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "beta_table.csv"));
  std::filesystem::remove_all(c.out_dir);
}

TEST(Experiment, ErrorsCarryStageName) {
  ExperimentConfig c;
  c.data.path = "/nonexistent/train.csv";
  c.out_dir = fresh_dir("err");
  try {
    run_experiment(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_EQ(std::string(e.what()).rfind("load:", 0), 0u) << e.what();
  }
}

TEST(Experiment, HierarchicalRun) {
  const auto dir = fresh_dir("hier");
  std::filesystem::create_directories(dir);
  Rng rng(3, Stream::oracle);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 12; ++i)
    for (int g = 1; g <= 3; ++g) rows.push_back({2000.0 + i, double(g), 0.1 * i + g + 0.3 * rng.normal()});
  write_csv(dir / "h.csv", {"time", "group", "y"}, rows);
  ExperimentConfig c = experiment_config_from_json(json{{"model", "hierarchical"}, {"beta", 0.5}});
  c.data.path = dir / "h.csv";
  c.fit.max_steps = 200;
  c.fit.K_init = 2;
  c.waic_samples = 100;
  c.out_dir = dir / "out";
  const ExperimentOutput out = run_experiment(c);
  EXPECT_TRUE(std::isfinite(out.metrics.waic));
  const CsvTable p = read_csv_table(c.out_dir / "predictive.csv");
  EXPECT_EQ(p.rows.size(), 201u * 3u);
  EXPECT_EQ(p.rows.front()[0], 2000.0);
  EXPECT_EQ(read_csv_table(c.out_dir / "cluster_map.csv").rows.size(), 12u);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, GpRun) {
  ExperimentConfig c = experiment_config_from_json(json::parse(R"({
    "model": "gp", "beta": 0.5, "seed": 1,
    "gp": {"inducing": 8, "prefit_steps": 100},
    "fit": {"max_steps": 200, "K_init": 2},
    "data": {"source": "two_regime", "n": 40, "n_test": 30},
    "metrics": {"waic_samples": 100}
  })"));
  c.out_dir = fresh_dir("gp");
  const ExperimentOutput out = run_experiment(c);
  EXPECT_TRUE(std::isfinite(out.metrics.llpd));
  const CsvTable q = read_csv_table(c.out_dir / "quantiles.csv");
  ASSERT_EQ(q.rows.size(), 201u);
  for (const auto& r : q.rows)
    for (std::size_t j = 2; j < r.size(); ++j) EXPECT_LE(r[j - 1], r[j]);
  std::filesystem::remove_all(c.out_dir);
}
