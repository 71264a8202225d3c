#include "gmpvi/likelihood.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gmpvi/error.hpp"

namespace gmpvi {
namespace {

double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Quadrature over eta_b = m + w_b s of log p(y | eta) for the logistic and
// Poisson families. Fills log I, d log I / d(m, s), E log p and d E / d(m, s).
template <class LogP>
void quadrature_terms(const QuadratureRule& quad, double m, double s, LogP&& logp,
                      ComponentTerms& out, double& dpred_ds, double& dexp_ds) {
  const int B = quad.order();
  double lbuf[kMaxQuadratureOrder] = {};
  double dbuf[kMaxQuadratureOrder];
  double exp_ll = 0.0, dexp_dm = 0.0;
  dexp_ds = 0.0;
  for (int b = 0; b < B; ++b) {
    double dlp = 0.0;
    const double lp = logp(m + quad.nodes[b] * s, dlp);
    lbuf[b] = quad.log_weights[b] + lp;
    dbuf[b] = dlp;
    exp_ll += quad.weights[b] * lp;
    dexp_dm += quad.weights[b] * dlp;
    dexp_ds += quad.weights[b] * quad.nodes[b] * dlp;
  }
  const double log_i = log_sum_exp(lbuf, B);
  double dm = 0.0, ds = 0.0;
  if (std::isfinite(log_i)) {
    for (int b = 0; b < B; ++b) {
      const double rho = std::exp(lbuf[b] - log_i);
      dm += rho * dbuf[b];
      ds += rho * quad.nodes[b] * dbuf[b];
    }
  }
  out.log_pred = log_i;
  out.d_log_pred.mean = dm;
  dpred_ds = ds;
  out.exp_loglik = exp_ll;
  out.d_exp_loglik.mean = dexp_dm;
}

}  // namespace

PriorSpec PriorSpec::isotropic(double sd) {
  if (!(sd > 0.0)) throw config_error("prior standard deviation must be positive");
  PriorSpec p;
  p.kind = Kind::isotropic;
  p.variance = sd * sd;
  return p;
}

PriorSpec PriorSpec::gaussian(Eigen::MatrixXd omega) {
  PriorSpec p;
  p.kind = Kind::gaussian;
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (omega.rows() != omega.cols() || llt.info() != Eigen::Success)
    throw numerical_error("prior covariance is not symmetric positive definite");
  p.covariance = std::move(omega);
  return p;
}

PriorSpec PriorSpec::diagonal(const Eigen::VectorXd& variances) {
  return gaussian(Eigen::MatrixXd(variances.asDiagonal()));
}

PriorExpectation expected_log_prior_gradient(const PriorSpec& prior, const Eigen::VectorXd& mean,
                                             const Eigen::MatrixXd& cov) {
  const auto p = mean.size();
  if (cov.rows() != p || cov.cols() != p) throw config_error("expected_log_prior: dimension mismatch");
  PriorExpectation out;
  if (prior.kind == PriorSpec::Kind::isotropic) {
    const double t2 = prior.variance;
    out.value = -0.5 * static_cast<double>(p) * (kLog2Pi + std::log(t2)) -
                (mean.squaredNorm() + cov.trace()) / (2.0 * t2);
    out.d_mean = -mean / t2;
    out.d_cov = Eigen::MatrixXd::Identity(p, p) * (-0.5 / t2);
    return out;
  }
  if (prior.covariance.rows() != p) throw config_error("expected_log_prior: prior dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(prior.covariance);
  if (llt.info() != Eigen::Success) throw numerical_error("prior covariance is not SPD");
  const Eigen::MatrixXd lmat = llt.matrixL();
  const double logdet = 2.0 * lmat.diagonal().array().log().sum();
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd im = inv * mean;
  out.value = -0.5 * (static_cast<double>(p) * kLog2Pi + logdet + mean.dot(im) +
                      (inv.cwiseProduct(cov)).sum());
  out.d_mean = -im;
  out.d_cov = -0.5 * inv;
  return out;
}

double expected_log_prior(const PriorSpec& prior, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov) {
  return expected_log_prior_gradient(prior, mean, cov).value;
}

LikelihoodModel LikelihoodModel::gaussian(double sigma2) {
  if (!(sigma2 > 0.0)) throw config_error("noise variance must be positive");
  return {Family::gaussian_fixed, sigma2};
}
LikelihoodModel LikelihoodModel::gaussian_unknown_variance() {
  return {Family::gaussian_unknown_variance, 1.0};
}
LikelihoodModel LikelihoodModel::logistic() { return {Family::logistic, 1.0}; }
LikelihoodModel LikelihoodModel::poisson() { return {Family::poisson, 1.0}; }

LikelihoodModel LikelihoodModel::from_name(const std::string& name, double sigma2) {
  if (name == "gaussian") return gaussian(sigma2);
  if (name == "gaussian-unknown-variance") return gaussian_unknown_variance();
  if (name == "logistic") return logistic();
  if (name == "poisson") return poisson();
  throw config_error("unknown likelihood '" + name + "'");
}

std::string LikelihoodModel::name() const {
  switch (family) {
    case Family::gaussian_fixed: return "gaussian";
    case Family::gaussian_unknown_variance: return "gaussian-unknown-variance";
    case Family::logistic: return "logistic";
    case Family::poisson: return "poisson";
  }
  return "unknown";
}

void validate_response(const LikelihoodModel& model, const Eigen::VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y(i);
    if (!std::isfinite(v)) throw data_error("response " + std::to_string(i) + " is not finite");
    if (model.family == Family::logistic && v != 0.0 && v != 1.0)
      throw data_error("logistic response " + std::to_string(i) + " must be 0 or 1");
    if (model.family == Family::poisson && (v < 0.0 || v != std::floor(v)))
      throw data_error("Poisson response " + std::to_string(i) + " must be a non-negative integer");
  }
}

double log_likelihood(const LikelihoodModel& model, const Eigen::VectorXd& x, double y,
                      const Eigen::VectorXd& theta) {
  switch (model.family) {
    case Family::gaussian_fixed:
      return normal_logpdf(y, x.dot(theta), model.noise_variance);
    case Family::gaussian_unknown_variance: {
      const auto q = x.size();
      return normal_logpdf(y, x.dot(theta.head(q)), std::exp(theta(q)));
    }
    case Family::logistic: {
      const double eta = x.dot(theta);
      return y > 0.5 ? log_sigmoid(eta) : log_sigmoid(-eta);
    }
    case Family::poisson: {
      const double eta = x.dot(theta);
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    }
  }
  return 0.0;
}

PredictorMoments predictor_moments(const LikelihoodModel& model, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  PredictorMoments m;
  const auto q = x.size();
  if (mean.size() != model.parameter_dim(q)) throw config_error("predictor_moments: dimension mismatch");
  m.mean = x.dot(mean.head(q));
  m.var = x.dot(cov.topLeftCorner(q, q) * x);
  if (model.family == Family::gaussian_unknown_variance) {
    m.tau_mean = mean(q);
    m.tau_var = cov(q, q);
    m.cross = x.dot(cov.col(q).head(q));
  }
  return m;
}

ComponentTerms component_terms(const LikelihoodModel& model, double y, const PredictorMoments& m,
                               const QuadratureRule& quad) {
  ComponentTerms t;
  switch (model.family) {
    case Family::gaussian_fixed: {
      const double s2 = model.noise_variance;
      const double v = m.var + s2;
      const double r = y - m.mean;
      t.log_pred = -0.5 * (kLog2Pi + std::log(v) + r * r / v);
      t.d_log_pred.mean = r / v;
      t.d_log_pred.var = -0.5 / v + 0.5 * r * r / (v * v);
      t.exp_loglik = -0.5 * (kLog2Pi + std::log(s2)) - (r * r + m.var) / (2.0 * s2);
      t.d_exp_loglik.mean = r / s2;
      t.d_exp_loglik.var = -0.5 / s2;
      return t;
    }
    case Family::logistic:
    case Family::poisson: {
      const double s = std::sqrt(std::max(m.var, 0.0));
      double dpred_ds = 0.0, dexp_ds = 0.0;
      if (model.family == Family::logistic) {
        const bool one = y > 0.5;
        quadrature_terms(
            quad, m.mean, s,
            [one](double eta, double& d) {
              d = one ? 1.0 - sigmoid(eta) : -sigmoid(eta);
              return one ? log_sigmoid(eta) : log_sigmoid(-eta);
            },
            t, dpred_ds, dexp_ds);
      } else {
        const double lfact = std::lgamma(y + 1.0);
        quadrature_terms(
            quad, m.mean, s,
            [y, lfact](double eta, double& d) {
              const double e = std::exp(eta);
              d = y - e;
              return y * eta - e - lfact;
            },
            t, dpred_ds, dexp_ds);
        // closed form replaces the quadrature expectation
        const double e = std::exp(m.mean + 0.5 * m.var);
        t.exp_loglik = y * m.mean - e - lfact;
        t.d_exp_loglik.mean = y - e;
        t.d_exp_loglik.var = -0.5 * e;
      }
      if (s > 0.0) {
        t.d_log_pred.var = dpred_ds / (2.0 * s);
        if (model.family == Family::logistic) t.d_exp_loglik.var = dexp_ds / (2.0 * s);
      }
      return t;
    }
    case Family::gaussian_unknown_variance: {
      const int B = quad.order();
      const double d = std::max(m.tau_var, 1e-300);
      const double sd = std::sqrt(d);
      const double cond = std::max(m.var - m.cross * m.cross / d, 0.0);
      double lbuf[kMaxQuadratureOrder] = {};
      double ga[kMaxQuadratureOrder], gv[kMaxQuadratureOrder], ev[kMaxQuadratureOrder];
      for (int b = 0; b < B; ++b) {
        const double w = quad.nodes[b];
        const double a = m.mean + m.cross * w / sd;
        const double e = std::exp(m.tau_mean + sd * w);
        const double v = cond + e;
        const double r = y - a;
        lbuf[b] = quad.log_weights[b] - 0.5 * (kLog2Pi + std::log(v) + r * r / v);
        ga[b] = r / v;
        gv[b] = -0.5 / v + 0.5 * r * r / (v * v);
        ev[b] = e;
      }
      const double log_i = log_sum_exp(lbuf, B);
      t.log_pred = log_i;
      PredictorMoments& g = t.d_log_pred;
      for (int b = 0; b < B; ++b) {
        const double rho = std::exp(lbuf[b] - log_i);
        const double w = quad.nodes[b];
        g.mean += rho * ga[b];
        g.var += rho * gv[b];
        g.tau_mean += rho * gv[b] * ev[b];
        g.cross += rho * (ga[b] * w / sd - gv[b] * 2.0 * m.cross / d);
        g.tau_var += rho * (ga[b] * (-0.5 * m.cross * w / (d * sd)) +
                            gv[b] * (m.cross * m.cross / (d * d) + ev[b] * w / (2.0 * sd)));
      }
      const double f = std::exp(-m.tau_mean + 0.5 * m.tau_var);
      const double r = y - m.mean + m.cross;
      const double qsum = r * r + m.var;
      t.exp_loglik = -0.5 * kLog2Pi - 0.5 * m.tau_mean - 0.5 * f * qsum;
      t.d_exp_loglik.mean = f * r;
      t.d_exp_loglik.cross = -f * r;
      t.d_exp_loglik.var = -0.5 * f;
      t.d_exp_loglik.tau_mean = -0.5 + 0.5 * f * qsum;
      t.d_exp_loglik.tau_var = -0.25 * f * qsum;
      return t;
    }
  }
  return t;
}

double expected_loglik(const LikelihoodModel& model, const Dataset& data,
                       const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                       const QuadratureRule& quad) {
  validate_response(model, data.y);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd x = data.X.row(i).transpose();
    acc += component_terms(model, data.y(i), predictor_moments(model, x, mean, cov), quad).exp_loglik;
  }
  return acc;
}

double log_component_predictive(const LikelihoodModel& model, const Eigen::VectorXd& x, double y,
                                const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                const QuadratureRule& quad) {
  return component_terms(model, y, predictor_moments(model, x, mean, cov), quad).log_pred;
}

double log_predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                              const Eigen::VectorXd& x, double y, const QuadratureRule& quad,
                              const Eigen::VectorXd& gate) {
  const Eigen::VectorXd w = mixture_weights(post, gate);
  std::vector<double> buf(post.components());
  for (int k = 0; k < post.components(); ++k) {
    const Eigen::MatrixXd cov = post.factors()[k].covariance();
    buf[k] = std::log(w(k)) + log_component_predictive(model, x, y, post.means()[k], cov, quad);
  }
  return log_sum_exp(buf.data(), post.components());
}

double predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                          const Eigen::VectorXd& x, double y, const QuadratureRule& quad,
                          const Eigen::VectorXd& gate) {
  return std::exp(log_predictive_density(model, post, x, y, quad, gate));
}

double predictive_density(const LikelihoodModel& model, const MixturePosterior& post,
                          const Eigen::VectorXd& x, double y, const QuadratureRule& quad) {
  return predictive_density(model, post, x, y, quad, x);
}

double log_score_sum(const LikelihoodModel& model, const MixturePosterior& post,
                     const Dataset& data, const QuadratureRule& quad,
                     const Eigen::MatrixXd* gating) {
  if (data.size() == 0) throw data_error("log_score_sum: empty data");
  validate_response(model, data.y);
  const Eigen::MatrixXd& Z = gating ? *gating : data.X;
  const double floor = std::log(kDensityFloor);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double lp = log_predictive_density(model, post, data.X.row(i).transpose(), data.y(i),
                                             quad, Z.row(i).transpose());
    acc += std::max(lp, floor);
  }
  return acc;
}

}  // namespace gmpvi
