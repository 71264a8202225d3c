#include "gmpvi/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmpvi/error.hpp"
#include "pvi_common.hpp"

namespace gmpvi {

void FitConfig::validate() const {
  if (!(step_size > 0.0)) throw config_error("step_size must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw config_error("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw config_error("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw config_error("adam_eps must be positive");
  if (max_steps < 0) throw config_error("max_steps must be non-negative");
  if (prune_interval < 1) throw config_error("prune_interval must be at least 1");
  if (convergence_window < 1) throw config_error("convergence_window must be at least 1");
  if (K_init < 1) throw config_error("K_init must be at least 1");
  if (minibatch_size < 0) throw config_error("minibatch_size must be non-negative");
  if (init_attempts < 1) throw config_error("init_attempts must be at least 1");
}

namespace {

std::vector<Eigen::Index> draw_batch(Eigen::Index n, int size, Rng& rng) {
  std::vector<Eigen::Index> idx = detail::all_rows(n);
  for (int j = 0; j < size; ++j) {
    const auto r = static_cast<std::size_t>(j) + rng.below(static_cast<std::uint64_t>(n - j));
    std::swap(idx[static_cast<std::size_t>(j)], idx[r]);
  }
  idx.resize(static_cast<std::size_t>(size));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

FitResult fit(const PviProblem& problem, const FitConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = problem.observation_count();
  if (n < 1) throw data_error("fit: no observations");

  int K = cfg.K_init;
  Rng init_rng(cfg.seed, Stream::initialization);
  Eigen::VectorXd params;
  bool ok = false;
  for (int attempt = 0; attempt < cfg.init_attempts && !ok; ++attempt) {
    params = problem.initial_parameters(K, init_rng);
    ok = std::isfinite(problem.evaluate(params, K, nullptr).total);
  }
  if (!ok)
    throw numerical_error("fit: objective not finite at initialization after " +
                          std::to_string(cfg.init_attempts) + " draws");

  const bool minibatch = cfg.minibatch_size > 0 && cfg.minibatch_size < n;
  Rng batch_rng(cfg.seed, Stream::minibatch);

  FitResult r;
  r.beta = problem.beta();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd grad;
  Eigen::VectorXd last_good = params;
  double lr = cfg.step_size;
  bool pruning = K > 1;
  int since_prune = 0;
  long adam_t = 0;

  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<Eigen::Index> batch;
    if (minibatch) batch = draw_batch(n, cfg.minibatch_size, batch_rng);
    const ObjectiveValue f = problem.evaluate(params, K, &grad, batch);
    if (!std::isfinite(f.total) || !grad.allFinite()) {
      params = last_good;
      lr *= 0.5;
      if (lr < 1e-12 * cfg.step_size) throw numerical_error("fit: objective or gradient not finite");
      continue;
    }
    last_good = params;
    r.floored = r.floored || f.floored;
    r.objective_trace.push_back(f.total);
    r.score_trace.push_back(f.score);
    r.regularizer_trace.push_back(f.regularizer);
    r.k_trace.push_back(K);
    r.steps = step + 1;

    ++adam_t;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
    params.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);

    ++since_prune;
    if (pruning && since_prune == cfg.prune_interval) {
      since_prune = 0;
      const std::vector<int> keep = dominant_components(problem.training_weights(params, K));
      if (static_cast<int>(keep.size()) < K) {
        PruneEvent ev{step + 1, {}};
        for (int k = 0, j = 0; k < K; ++k) {
          if (j < static_cast<int>(keep.size()) && keep[j] == k)
            ++j;
          else
            ev.removed.push_back(k);
        }
        params = problem.select_components(params, K, keep, true);
        m = problem.select_components(m, K, keep, false);
        v = problem.select_components(v, K, keep, false);
        K = static_cast<int>(keep.size());
        last_good = params;
        r.pruned_history.push_back(std::move(ev));
        if (K == 1) pruning = false;
      } else {
        pruning = false;
      }
      continue;
    }

    if (!pruning && !minibatch) {
      const auto len = r.objective_trace.size();
      const auto w = static_cast<std::size_t>(cfg.convergence_window);
      if (len > w && r.k_trace[len - 1 - w] == K) {
        const double now = r.objective_trace[len - 1];
        const double before = r.objective_trace[len - 1 - w];
        if (std::abs(now - before) / std::max(1.0, std::abs(now)) < cfg.convergence_tol) {
          r.converged = true;
          break;
        }
      }
    }
  }

  r.parameters = params;
  r.components = K;
  r.posterior = problem.mixture(params, K);
  return r;
}

FitResult fit(const LikelihoodModel& model, const PriorSpec& prior, const Dataset& data,
              const ObjectiveConfig& obj_cfg, const FitConfig& fit_cfg, const GatingSpec& gating) {
  const GlmProblem problem(model, prior, data, gating, obj_cfg);
  return fit(problem, fit_cfg);
}

nlohmann::ordered_json to_json(const FitResult& r) {
  nlohmann::ordered_json j;
  j["beta"] = r.beta;
  j["K"] = r.components;
  j["converged"] = r.converged;
  j["floored"] = r.floored;
  j["steps"] = r.steps;
  j["final_objective"] = r.final_objective();
  j["posterior"] = to_json(r.posterior);
  j["parameters"] = std::vector<double>(r.parameters.data(), r.parameters.data() + r.parameters.size());
  auto hist = nlohmann::ordered_json::array();
  for (const auto& ev : r.pruned_history) {
    nlohmann::ordered_json e;
    e["step"] = ev.step;
    e["removed"] = ev.removed;
    hist.push_back(e);
  }
  j["pruned_history"] = hist;
  j["objective_trace"] = r.objective_trace;
  return j;
}

void write_trace_csv(const std::filesystem::path& path, const FitResult& r) {
  std::vector<std::vector<double>> rows;
  rows.reserve(r.objective_trace.size());
  for (std::size_t s = 0; s < r.objective_trace.size(); ++s)
    rows.push_back({static_cast<double>(s), r.objective_trace[s], static_cast<double>(r.k_trace[s]),
                    r.score_trace[s], r.regularizer_trace[s]});
  write_csv(path, {"step", "objective", "K", "score_term", "regularizer_term"}, rows);
}

}  // namespace gmpvi
