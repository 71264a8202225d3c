#include <gtest/gtest.h>

#include "gmpvi/error.hpp"
#include "gmpvi/hierarchical.hpp"
#include "support/oracles.hpp"

using namespace gmpvi;
using namespace gmpvi::testing;

namespace {

HierarchicalData toy_data(Rng& rng) {
  Eigen::VectorXd t(6), y(6);
  std::vector<int> g;
  for (int r = 0; r < 6; ++r) {
    t(r) = r / 2;
    g.push_back(10 + r % 2);
    y(r) = rng.normal();
  }
  return HierarchicalData::from_long(t, g, y);
}

HierarchicalSpec toy_spec() {
  HierarchicalSpec s;
  s.sigma2_a = 0.3;
  s.sigma2_b = 0.5;
  s.sigma2_eps = 0.7;
  s.prior_sd = 3;
  return s;
}

}  // namespace

TEST(HierarchicalData, GroupsByTimeAndRescales) {
  const Eigen::VectorXd t = (Eigen::VectorXd(5) << 1990, 1990, 1992, 1994, 1994).finished();
  const Eigen::VectorXd y = (Eigen::VectorXd(5) << 1, 2, 3, 4, 5).finished();
  const HierarchicalData d = HierarchicalData::from_long(t, {7, 3, 7, 3, 9}, y);
  EXPECT_EQ(d.n_times(), 3);
  EXPECT_EQ(d.n_groups(), 3);
  EXPECT_EQ(d.group_labels, (std::vector<int>{3, 7, 9}));
  EXPECT_EQ(d.observation_count(), 5);
  EXPECT_DOUBLE_EQ(d.times(1), 0.5);
  EXPECT_EQ(d.time_min, 1990);
  EXPECT_EQ(d.groups[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(d.y[0](0), 2.0);  // group label 3 at the first time
  EXPECT_EQ(d.y[2](1), 5.0);
  EXPECT_EQ(d.group_index(9), 2);
  EXPECT_THROW(d.group_index(4), Error);
  EXPECT_THROW(HierarchicalData::from_long(t, {7, 7, 7, 3, 9}, y), Error);  // duplicate (time, group)

  const Eigen::VectorXd t2 = (Eigen::VectorXd(2) << 1993, 1996).finished();
  const HierarchicalData test = HierarchicalData::from_long(t2, {3, 9}, Eigen::Vector2d(0, 0), &d);
  EXPECT_DOUBLE_EQ(test.times(0), 0.75);
  EXPECT_DOUBLE_EQ(test.times(1), 1.5);
  EXPECT_EQ(test.groups[1], std::vector<int>{2});
  EXPECT_THROW(HierarchicalData::from_long(t2, {3, 4}, Eigen::Vector2d(0, 0), &d), Error);
}

TEST(HierarchicalDesign, Rows) {
  const Eigen::VectorXd f = time_features(0.5, 3);
  EXPECT_TRUE(f.isApprox(Eigen::Vector4d(1, 0.5, 0.25, 0.125)));
  const Eigen::VectorXd r = hierarchical_design_row(0.5, 1, 3, 3);
  ASSERT_EQ(r.size(), 7);
  EXPECT_EQ(r.tail(3), Eigen::Vector3d(0, 1, 0));
}

TEST(HierarchicalSpec, Validation) {
  HierarchicalSpec s;
  EXPECT_NO_THROW(s.validate());
  s.sigma2_eps = 0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(MomentVariances, RecoversSimulatedVariances) {
  Rng rng(1, Stream::oracle);
  const int T = 300, G = 12;
  const double sa = 0.5, sb = 1.0, se = 0.2;
  Eigen::VectorXd b(G);
  for (int j = 0; j < G; ++j) b(j) = std::sqrt(sb) * rng.normal();
  std::vector<double> tv, yv;
  std::vector<int> gv;
  for (int i = 0; i < T; ++i) {
    const double t = i / double(T - 1), a = std::sqrt(sa) * rng.normal();
    for (int j = 0; j < G; ++j) {
      tv.push_back(t);
      gv.push_back(j);
      yv.push_back(1 + 2 * t - t * t + a + b(j) + std::sqrt(se) * rng.normal());
    }
  }
  const HierarchicalData d = HierarchicalData::from_long(Eigen::Map<Eigen::VectorXd>(tv.data(), tv.size()), gv,
                                                         Eigen::Map<Eigen::VectorXd>(yv.data(), yv.size()));
  const HierarchicalSpec s = moment_variances(d);
  EXPECT_NEAR(s.sigma2_eps, se, 0.1 * se);
  EXPECT_NEAR(s.sigma2_a, sa, 0.25 * sa);
  const double sample_b = (b.array() - b.mean()).square().sum() / (G - 1);
  EXPECT_NEAR(s.sigma2_b, sample_b, 0.1 * sample_b);
}

class HierarchicalGradient : public ::testing::TestWithParam<int> {};

TEST_P(HierarchicalGradient, MatchesFiniteDifferences) {
  const int K = GetParam();
  Rng rng(K, Stream::oracle);
  ObjectiveConfig oc;
  oc.beta = 0.6;
  HierarchicalProblem p(toy_spec(), toy_data(rng), oc);
  Eigen::VectorXd th = p.initial_parameters(K, rng);
  for (Eigen::Index j = 0; j < th.size(); ++j) th(j) += 0.3 * rng.normal();
  EXPECT_LT(fd_worst(p, th, K), 1e-6);
  const std::vector<Eigen::Index> batch{0, 2};
  EXPECT_LT(fd_worst(p, th, K, batch), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Components, HierarchicalGradient, ::testing::Values(1, 2, 3));

TEST(HierarchicalPredictive, SingleComponentIsDenseGaussian) {
  Rng rng(5, Stream::oracle);
  const HierarchicalSpec spec = toy_spec();
  const int g = 3, p = spec.coefficient_count() + g;
  const Eigen::VectorXd mu = random_vector(p, rng);
  const Eigen::MatrixXd S = random_spd(p, rng);
  const MixturePosterior post({mu}, {cov_to_chol(S)}, Eigen::MatrixXd(0, 4));
  const double t = 0.4;
  Eigen::MatrixXd X(g, p);
  for (int j = 0; j < g; ++j) X.row(j) = hierarchical_design_row(t, j, g, 3).transpose();
  const Eigen::MatrixXd cov = X * S * X.transpose() + (spec.sigma2_a + spec.sigma2_eps) * Eigen::MatrixXd::Identity(g, g);
  const StackedPredictive sp = hierarchical_predictive(spec, post, g, t);
  const Eigen::VectorXd y = random_vector(g, rng);
  EXPECT_NEAR(sp.log_density(y), dense_mvn_logpdf(y, X * mu, cov), 1e-10);
  EXPECT_NEAR(sp.mean(1), X.row(1).dot(mu), 1e-12);
  EXPECT_NEAR(sp.variance(1), cov(1, 1), 1e-12);
  const StackedPredictive m = sp.marginal(2);
  EXPECT_NEAR(m.log_density(Eigen::VectorXd::Constant(1, 0.3)), normal_logpdf(0.3, X.row(2).dot(mu), cov(2, 2)), 1e-12);
  EXPECT_EQ(sp.dominant(), 0);
}

TEST(HierarchicalPosterior, LocalFactorsAndWaic) {
  Rng rng(6, Stream::oracle);
  HierarchicalProblem p(toy_spec(), toy_data(rng), {});
  const Eigen::VectorXd th = p.initial_parameters(2, rng);
  const HierarchicalPosterior hp = HierarchicalPosterior::from_parameters(p, th, 2);
  EXPECT_EQ(hp.local_means.size(), 3);
  EXPECT_TRUE((hp.local_vars.array() > 0).all());
  EXPECT_EQ(hp.mixture.components(), 2);
  EXPECT_TRUE(std::isfinite(hierarchical_waic(p, hp.mixture, 200, 1)));
  EXPECT_EQ(cluster_map(hp.mixture, p.data().times).size(), 3u);
}
