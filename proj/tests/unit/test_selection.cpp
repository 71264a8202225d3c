#include <gtest/gtest.h>

#include <cmath>

#include "gmpvi/error.hpp"
#include "gmpvi/selection.hpp"
#include "gmpvi/simulate.hpp"
#include "support/oracles.hpp"

using namespace gmpvi;
using namespace gmpvi::testing;

TEST(Waic, MatrixFormulaByHand) {
  Eigen::MatrixXd L(3, 2);
  L << -1.0, -2.0,  //
      -1.5, -2.5,   //
      -0.5, -3.0;
  double want = 0.0;
  for (int i = 0; i < 2; ++i) {
    const Eigen::ArrayXd c = L.col(i).array();
    const double lppd = std::log(c.exp().mean());
    const double var = (c - c.mean()).square().sum() / 2.0;
    want += lppd - var;
  }
  EXPECT_NEAR(waic(L), want, 1e-12);
}

TEST(Waic, FloorsVanishingDensities) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Constant(2, 2, -1e4);
  L.col(0).setConstant(-1.0);
  int floored = 0;
  const double w = waic(L, &floored);
  EXPECT_EQ(floored, 1);
  EXPECT_NEAR(w, -1.0 + std::log(1e-300), 1e-9);
}

TEST(Waic, GlmMatchesManualDraws) {
  const Dataset d = simulate_linear(20, 2, Eigen::Vector2d(0.0, 1.0), 0.5);
  const AveragedPosterior post{Eigen::VectorXd::Ones(1), {Eigen::Vector2d(0.1, 0.9)},
                               {cov_to_chol(0.01 * Eigen::Matrix2d::Identity())}};
  const LikelihoodModel m = LikelihoodModel::gaussian(0.5);
  const Eigen::MatrixXd draws = sample_theta(post, 500, 77);
  Eigen::MatrixXd L(500, 20);
  for (int s = 0; s < 500; ++s)
    for (int i = 0; i < 20; ++i) L(s, i) = log_likelihood(m, d.X.row(i).transpose(), d.y(i), draws.row(s).transpose());
  EXPECT_NEAR(waic(m, post, d, 500, 77), waic(L), 1e-9);
}

TEST(ExpectedImprovement, KnownValues) {
  EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0), 1.0 / std::sqrt(2 * M_PI), 1e-12);
  EXPECT_NEAR(expected_improvement(2.0, 0.0, 1.0), 1.0, 1e-12);
  EXPECT_NEAR(expected_improvement(0.5, 0.0, 1.0), 0.0, 1e-12);
  EXPECT_GT(expected_improvement(0.0, 2.0, 0.0), expected_improvement(0.0, 1.0, 0.0));
}

TEST(BetaSearchConfig, Validation) {
  BetaSearchConfig s;
  EXPECT_THROW(s.validate(), Error);  // grid mode needs values
  s.grid = {0.1, -1.0};
  EXPECT_THROW(s.validate(), Error);
  s.grid = {0.1, 1.0};
  EXPECT_NO_THROW(s.validate());
  s.mode = BetaSearchConfig::Mode::bayes_opt;
  s.lower = 10;
  s.upper = 1;
  EXPECT_THROW(s.validate(), Error);
}

namespace {

// A cheap problem and a synthetic WAIC peaked at log beta = log 2, so the
// search logic is tested independently of fitting quality.
struct SyntheticSearch {
  Dataset data = simulate_linear(20, 1, Eigen::Vector2d(0.0, 1.0), 0.5);
  ProblemFactory make = [this](double beta) {
    ObjectiveConfig oc;
    oc.beta = beta;
    return std::make_unique<GlmProblem>(LikelihoodModel::gaussian(0.5), PriorSpec::isotropic(1.0), data,
                                        GatingSpec{}, oc);
  };
  WaicFunction score = [](const PviProblem& p, const FitResult&) {
    const double u = std::log(p.beta()) - std::log(2.0);
    return -u * u;
  };
  FitConfig fit_cfg = [] {
    FitConfig c;
    c.K_init = 1;
    c.max_steps = 5;
    return c;
  }();
};

}  // namespace

TEST(SelectBeta, GridPicksArgmax) {
  SyntheticSearch s;
  BetaSearchConfig cfg;
  cfg.grid = {0.01, 0.5, 3.0, 100.0};
  const BetaSelection sel = select_beta(s.make, s.score, cfg, s.fit_cfg);
  EXPECT_EQ(sel.beta, 3.0);
  EXPECT_EQ(sel.fit.beta, 3.0);
  ASSERT_EQ(sel.table.size(), 4u);
  for (const auto& e : sel.table) EXPECT_TRUE(e.ok);
}

TEST(SelectBeta, BayesOptFindsPeak) {
  SyntheticSearch s;
  BetaSearchConfig cfg;
  cfg.mode = BetaSearchConfig::Mode::bayes_opt;
  cfg.bo_initial = 4;
  cfg.bo_iters = 10;
  cfg.seed = 3;
  const BetaSelection sel = select_beta(s.make, s.score, cfg, s.fit_cfg);
  EXPECT_NEAR(std::log(sel.beta), std::log(2.0), 0.15);
  EXPECT_EQ(sel.table.size(), 10u);  // bo_iters counts every evaluation
  for (const auto& e : sel.table) {
    EXPECT_GE(e.beta, cfg.lower * (1 - 1e-12));
    EXPECT_LE(e.beta, cfg.upper * (1 + 1e-12));
  }
}

TEST(SelectBeta, SkipsFailuresAndErrorsWhenAllFail) {
  SyntheticSearch s;
  BetaSearchConfig cfg;
  cfg.grid = {0.5, 3.0};
  const WaicFunction flaky = [](const PviProblem& p, const FitResult&) -> double {
    if (p.beta() > 1.0) throw numerical_error("diverged");
    return 0.0;
  };
  const BetaSelection sel = select_beta(s.make, flaky, cfg, s.fit_cfg);
  EXPECT_EQ(sel.beta, 0.5);
  EXPECT_FALSE(sel.table[1].ok);
  EXPECT_FALSE(sel.table[1].note.empty());
  const WaicFunction broken = [](const PviProblem&, const FitResult&) -> double { throw numerical_error("x"); };
  EXPECT_THROW(select_beta(s.make, broken, cfg, s.fit_cfg), Error);
}
