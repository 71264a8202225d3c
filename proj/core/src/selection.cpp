#include "gmpvi/selection.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gmpvi/error.hpp"

namespace gmpvi {

double waic(const Eigen::MatrixXd& loglik, int* floored) {
  const Eigen::Index M = loglik.rows();
  if (M < 2) throw config_error("waic: need at least two draws");
  const double floor = std::log(kDensityFloor);
  int count = 0;
  double lppd = 0.0, penalty = 0.0;
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const Eigen::VectorXd col = loglik.col(i);
    const double lme = log_sum_exp(col.data(), static_cast<int>(M)) - std::log(static_cast<double>(M));
    if (!(lme >= floor)) {
      ++count;
      lppd += floor;
    } else {
      lppd += lme;
    }
    const double mean = col.mean();
    penalty += (col.array() - mean).square().sum() / static_cast<double>(M - 1);
  }
  if (floored) *floored = count;
  return lppd - penalty;
}

double waic(const LikelihoodModel& model, const AveragedPosterior& post, const Dataset& data, int M,
            std::uint64_t seed, int* floored) {
  Rng rng(seed, Stream::sampling);
  const Eigen::MatrixXd theta = sample_theta(post, M, rng);
  Eigen::MatrixXd ll(M, data.size());
  for (int m = 0; m < M; ++m) {
    const Eigen::VectorXd t = theta.row(m).transpose();
    for (Eigen::Index i = 0; i < data.size(); ++i)
      ll(m, i) = log_likelihood(model, data.X.row(i).transpose(), data.y(i), t);
  }
  return waic(ll, floored);
}

void BetaSearchConfig::validate() const {
  if (!(lower > 0.0) || !(upper > lower)) throw config_error("beta search bounds must satisfy 0 < lower < upper");
  if (waic_samples < 100) throw config_error("waic_samples must be at least 100");
  if (mode == Mode::grid) {
    if (grid.empty()) throw config_error("beta grid is empty");
    for (const double b : grid)
      if (!(b > 0.0)) throw config_error("beta grid values must be positive");
  } else {
    if (bo_initial < 1) throw config_error("bo_initial must be at least 1");
    if (bo_iters < bo_initial) throw config_error("bo_iters must be at least bo_initial");
  }
}

double expected_improvement(double mean, double sd, double best) {
  if (!(sd > 0.0)) return std::max(mean - best, 0.0);
  const double z = (mean - best) / sd;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return (mean - best) * cdf + sd * pdf;
}

namespace {

constexpr double kSurrogateNoise = 1e-6;

/// Zero-mean GP on standardized values with an SE kernel of unit variance.
struct Surrogate {
  std::vector<double> x;
  Eigen::VectorXd y;
  double length = 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;

  static double k(double a, double b, double l) { return std::exp(-0.5 * (a - b) * (a - b) / (l * l)); }

  Eigen::MatrixXd gram(double l) const {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) K(i, j) = k(x[i], x[j], l) + (i == j ? kSurrogateNoise : 0.0);
    return K;
  }

  void fit(const std::vector<double>& xs, const Eigen::VectorXd& ys) {
    x = xs;
    y = ys;
    double best = -std::numeric_limits<double>::infinity();
    for (const double l : {0.1, 0.3, 1.0, 3.0}) {
      Eigen::LLT<Eigen::MatrixXd> c(gram(l));
      if (c.info() != Eigen::Success) continue;
      const Eigen::VectorXd a = c.solve(y);
      const double logdet = 2.0 * c.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const double ml = -0.5 * y.dot(a) - 0.5 * logdet;
      if (ml > best) {
        best = ml;
        length = l;
      }
    }
    llt.compute(gram(length));
    alpha = llt.solve(y);
  }

  std::pair<double, double> predict(double t) const {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = k(t, x[i], length);
    const double mean = ks.dot(alpha);
    const double var = std::max(1.0 - ks.dot(llt.solve(ks)), 0.0);
    return {mean, std::sqrt(var)};
  }
};

}  // namespace

BetaSelection select_beta(const ProblemFactory& make, const WaicFunction& score,
                          const BetaSearchConfig& search, const FitConfig& fit_cfg) {
  search.validate();
  BetaSelection out;
  bool have_best = false;
  double best_waic = -std::numeric_limits<double>::infinity();

  auto evaluate = [&](double beta) -> BetaEvaluation {
    BetaEvaluation e;
    e.beta = beta;
    try {
      const std::unique_ptr<PviProblem> problem = make(beta);
      FitResult r = fit(*problem, fit_cfg);
      e.waic = score(*problem, r);
      e.K = r.components;
      e.ok = std::isfinite(e.waic);
      if (!e.ok) e.note = "non-finite WAIC";
      if (e.ok && (!have_best || e.waic > best_waic)) {
        have_best = true;
        best_waic = e.waic;
        out.beta = beta;
        out.fit = std::move(r);
      }
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::numerical) throw;
      e.note = err.what();
    }
    out.table.push_back(e);
    return e;
  };

  if (search.mode == BetaSearchConfig::Mode::grid) {
    for (const double b : search.grid) evaluate(b);
  } else {
    const double lo = std::log(search.lower), hi = std::log(search.upper);
    Rng rng(search.seed, Stream::bayes_opt);
    std::vector<double> xs;
    std::vector<double> ys;
    auto record = [&](double t) {
      const BetaEvaluation e = evaluate(std::exp(t));
      if (e.ok) {
        xs.push_back(t);
        ys.push_back(e.waic);
      }
    };
    // One-dimensional Latin hypercube: one uniform draw per stratum.
    const int n0 = search.bo_initial;
    for (int s = 0; s < n0; ++s) record(lo + (hi - lo) * (s + rng.uniform()) / n0);

    constexpr int kGrid = 1001;
    for (int it = n0; it < search.bo_iters; ++it) {
      double t_next = 0.0;
      if (xs.empty()) {
        t_next = lo + (hi - lo) * rng.uniform();
      } else {
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        const double mu = y.mean();
        double sd = std::sqrt((y.array() - mu).square().mean());
        if (!(sd > 1e-12)) sd = 1.0;
        Surrogate gp;
        gp.fit(xs, (y.array() - mu) / sd);
        const double incumbent = ((y.array() - mu) / sd).maxCoeff();
        double best_ei = -1.0, far_t = lo, far_d = -1.0;
        for (int g = 0; g < kGrid; ++g) {
          const double t = lo + (hi - lo) * g / (kGrid - 1);
          double d = std::numeric_limits<double>::infinity();
          for (const double xv : xs) d = std::min(d, std::abs(t - xv));
          if (d < 1e-9) continue;
          if (d > far_d) {
            far_d = d;
            far_t = t;
          }
          const auto [m, s] = gp.predict(t);
          const double ei = expected_improvement(m, s, incumbent);
          if (ei > best_ei) {
            best_ei = ei;
            t_next = t;
          }
        }
        if (!(best_ei > 0.0)) t_next = far_t;
      }
      record(t_next);
    }
  }
  if (!have_best) throw numerical_error("select_beta: every beta failed to fit");
  return out;
}

BetaSelection select_beta(const LikelihoodModel& model, const PriorSpec& prior, const Dataset& data,
                          const BetaSearchConfig& search, const FitConfig& fit_cfg,
                          const ObjectiveConfig& obj_cfg, const GatingSpec& gating) {
  const ProblemFactory make = [&](double beta) {
    ObjectiveConfig c = obj_cfg;
    c.beta = beta;
    return std::make_unique<GlmProblem>(model, prior, data, gating, c);
  };
  const WaicFunction score = [&](const PviProblem& p, const FitResult& r) {
    const auto& glm = static_cast<const GlmProblem&>(p);
    return waic(model, averaged_posterior(r.posterior, glm.gating_inputs()), data,
                search.waic_samples, search.seed);
  };
  return select_beta(make, score, search, fit_cfg);
}

}  // namespace gmpvi
