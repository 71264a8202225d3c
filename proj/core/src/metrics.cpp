#include "gmpvi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gmpvi/dataset.hpp"
#include "gmpvi/error.hpp"

namespace gmpvi {

double llpd(const LikelihoodModel& model, const MixturePosterior& post, const Dataset& test,
            const QuadratureRule& quad, const Eigen::MatrixXd* gating) {
  if (test.size() == 0) throw data_error("llpd: empty test set");
  return log_score_sum(model, post, test, quad, gating) / static_cast<double>(test.size());
}

Eigen::VectorXd predict_probabilities(const MixturePosterior& post, const Eigen::MatrixXd& X,
                                      const QuadratureRule& quad, const Eigen::MatrixXd* gating) {
  const LikelihoodModel model = LikelihoodModel::logistic();
  Eigen::VectorXd p(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd x = X.row(i).transpose();
    const Eigen::VectorXd z = gating ? Eigen::VectorXd(gating->row(i).transpose()) : x;
    p(i) = predictive_density(model, post, x, 1.0, quad, z);
  }
  return p;
}

RocCurve roc_curve(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  if (scores.size() != labels.size()) throw data_error("roc: scores and labels differ in length");
  const Eigen::Index n = scores.size();
  double pos = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) throw data_error("roc: labels must be 0 or 1");
    pos += labels(i);
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw data_error("roc: labels must contain both classes");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });

  RocCurve roc;
  roc.fpr.push_back(0.0);
  roc.tpr.push_back(0.0);
  double tp = 0.0, fp = 0.0;
  for (std::size_t j = 0; j < order.size();) {
    const double s = scores(order[j]);
    for (; j < order.size() && scores(order[j]) == s; ++j) {
      if (labels(order[j]) == 1.0)
        tp += 1.0;
      else
        fp += 1.0;
    }
    roc.fpr.push_back(fp / neg);
    roc.tpr.push_back(tp / pos);
  }
  return roc;
}

double RocCurve::auc() const {
  double a = 0.0;
  for (std::size_t j = 1; j < fpr.size(); ++j) a += (fpr[j] - fpr[j - 1]) * 0.5 * (tpr[j] + tpr[j - 1]);
  return a;
}

double RocCurve::tpr_at(double target) const {
  double best = 0.0;
  for (std::size_t j = 0; j < fpr.size(); ++j)
    if (fpr[j] <= target) best = std::max(best, tpr[j]);
  return best;
}

MetricReport roc_and_tpr(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels,
                         const std::vector<double>& fpr_targets) {
  MetricReport r;
  r.roc = roc_curve(scores, labels);
  for (const double t : fpr_targets) r.tpr_at_fpr[t] = r.roc.tpr_at(t);
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["llpd"] = r.llpd;
  j["waic"] = r.waic;
  j["beta"] = r.beta;
  j["K"] = r.K;
  nlohmann::ordered_json t = nlohmann::ordered_json::object();
  for (const auto& [fpr, tpr] : r.tpr_at_fpr) {
    char key[32];
    std::snprintf(key, sizeof key, "%.15g", fpr);
    t[key] = tpr;
  }
  j["tpr_at_fpr"] = t;
  return j;
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc) {
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < roc.fpr.size(); ++j) rows.push_back({roc.fpr[j], roc.tpr[j]});
  write_csv(path, {"fpr", "tpr"}, rows);
}

}  // namespace gmpvi
