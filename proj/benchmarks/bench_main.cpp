#include <benchmark/benchmark.h>

#include "gmpvi/hierarchical.hpp"
#include "gmpvi/latent_gp.hpp"
#include "gmpvi/objective.hpp"
#include "gmpvi/simulate.hpp"

using namespace gmpvi;

namespace {

void BM_GaussHermiteRule(benchmark::State& state) {
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gauss_hermite_rule(order));
}
BENCHMARK(BM_GaussHermiteRule)->Arg(5)->Arg(20)->Arg(64);

// Logistic quadrant problem, objective plus gradient at K components.
void BM_QuadrantObjective(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  ObjectiveConfig oc;
  oc.beta = 0.01;
  const GlmProblem p(LikelihoodModel::logistic(), PriorSpec::isotropic(2.5), simulate_logistic_quadrants(1000, 1), {},
                     oc);
  Rng rng(1, Stream::initialization);
  const Eigen::VectorXd th = p.initial_parameters(K, rng);
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(p.evaluate(th, K, &g));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_QuadrantObjective)->Arg(1)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_QuadrantObjectiveMinibatch(benchmark::State& state) {
  ObjectiveConfig oc;
  oc.beta = 0.01;
  const GlmProblem p(LikelihoodModel::logistic(), PriorSpec::isotropic(2.5), simulate_logistic_quadrants(1000, 1), {},
                     oc);
  Rng rng(1, Stream::initialization);
  const Eigen::VectorXd th = p.initial_parameters(10, rng);
  std::vector<Eigen::Index> batch(100);
  for (Eigen::Index i = 0; i < 100; ++i) batch[static_cast<std::size_t>(i)] = 10 * i;
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(p.evaluate(th, 10, &g, batch));
}
BENCHMARK(BM_QuadrantObjectiveMinibatch)->Unit(benchmark::kMillisecond);

void BM_CubicObjective(benchmark::State& state) {
  ObjectiveConfig oc;
  oc.beta = 0.01;
  const GlmProblem p(LikelihoodModel::gaussian(0.1), PriorSpec::isotropic(10), simulate_cubic(1000, 1), {}, oc);
  Rng rng(1, Stream::initialization);
  const Eigen::VectorXd th = p.initial_parameters(10, rng);
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(p.evaluate(th, 10, &g));
}
BENCHMARK(BM_CubicObjective)->Unit(benchmark::kMillisecond);

void BM_HierarchicalObjective(benchmark::State& state) {
  Rng data_rng(2, Stream::simulation);
  const int T = 100, G = 5;
  Eigen::VectorXd t(T * G), y(T * G);
  std::vector<int> g;
  for (int i = 0; i < T * G; ++i) {
    t(i) = i / G;
    g.push_back(i % G);
    y(i) = std::sin(0.05 * t(i)) + 0.3 * data_rng.normal();
  }
  HierarchicalSpec spec;
  spec.sigma2_a = 0.1;
  spec.sigma2_b = 0.5;
  spec.sigma2_eps = 0.1;
  const HierarchicalProblem p(spec, HierarchicalData::from_long(t, g, y), ObjectiveConfig{});
  Rng rng(1, Stream::initialization);
  const Eigen::VectorXd th = p.initial_parameters(5, rng);
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(p.evaluate(th, 5, &grad));
}
BENCHMARK(BM_HierarchicalObjective)->Unit(benchmark::kMillisecond);

void BM_GpObjective(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const Dataset d = simulate_two_regime(300, 1);
  const Eigen::MatrixXd Z = kmeans_centers(d.X, m, 1);
  const GpProblem p(d.X, d.y, Z, KernelSpec{}, ObjectiveConfig{}, 0.1);
  Rng rng(1, Stream::initialization);
  const Eigen::VectorXd th = p.initial_parameters(5, rng);
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(p.evaluate(th, 5, &grad));
}
BENCHMARK(BM_GpObjective)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
