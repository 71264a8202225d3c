#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <utility>
#include <vector>

#include "gmpvi/likelihood.hpp"

namespace gmpvi {

/// Mean log predictive density over a test set. Gating rows default to the
/// test design rows.
double llpd(const LikelihoodModel& model, const MixturePosterior& post, const Dataset& test,
            const QuadratureRule& quad, const Eigen::MatrixXd* gating = nullptr);

/// Predictive P(y = 1 | x) for each row of a logistic test set.
Eigen::VectorXd predict_probabilities(const MixturePosterior& post, const Eigen::MatrixXd& X,
                                      const QuadratureRule& quad,
                                      const Eigen::MatrixXd* gating = nullptr);

/// Empirical ROC from a threshold sweep over the distinct scores, running
/// from (0, 0) to (1, 1).
struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;

  double auc() const;
  /// Largest TPR among points with FPR <= target.
  double tpr_at(double target) const;
};

/// Throws a data error unless labels contain both classes.
RocCurve roc_curve(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels);

struct MetricReport {
  double llpd = 0.0;
  double waic = 0.0;
  double beta = 0.0;
  int K = 0;
  RocCurve roc;
  std::map<double, double> tpr_at_fpr;
};

MetricReport roc_and_tpr(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels,
                         const std::vector<double>& fpr_targets);

/// {llpd, waic, beta, K, tpr_at_fpr: {...}}
nlohmann::ordered_json to_json(const MetricReport& r);

/// Two columns: fpr, tpr.
void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc);

}  // namespace gmpvi
