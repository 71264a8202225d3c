#include "gmpvi/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

#include "gmpvi/error.hpp"

namespace gmpvi {
namespace {

// Orthonormal probabilists' Hermite polynomials h_0..h_{n-1} at x, via
// h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1). Returns h_n and fills
// sum of squares of h_0..h_{n-1} and h_{n-1}.
double orthonormal_hermite(int n, double x, double* sum_sq, double* prev) {
  double h_prev = 0.0;
  double h = 1.0;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    acc += h * h;
    const double next = (x * h - std::sqrt(static_cast<double>(k)) * h_prev) /
                        std::sqrt(static_cast<double>(k + 1));
    h_prev = h;
    h = next;
  }
  if (sum_sq) *sum_sq = acc;
  if (prev) *prev = h_prev;
  return h;
}

}  // namespace

QuadratureRule gauss_hermite_rule(int order) {
  if (order < 1 || order > kMaxQuadratureOrder)
    throw config_error("quadrature order must be in [1, 64], got " + std::to_string(order));

  const int n = order;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  std::vector<double> x(eig.eigenvalues().data(), eig.eigenvalues().data() + n);
  std::sort(x.begin(), x.end());

  // Newton polish: h_n'(x) = sqrt(n) h_{n-1}(x).
  for (double& xi : x) {
    for (int it = 0; it < 3; ++it) {
      double prev = 0.0;
      const double hn = orthonormal_hermite(n, xi, nullptr, &prev);
      const double d = std::sqrt(static_cast<double>(n)) * prev;
      if (d == 0.0) break;
      xi -= hn / d;
    }
  }

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int b = 0; b < n; ++b) {
    // enforce exact symmetry
    const double node = 0.5 * (x[b] - x[n - 1 - b]);
    rule.nodes[b] = node;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    double sum_sq = 0.0;
    orthonormal_hermite(n, rule.nodes[b], &sum_sq, nullptr);
    rule.weights[b] = 1.0 / sum_sq;
  }
  for (int b = 0; b < n; ++b) {
    rule.weights[b] = 0.5 * (rule.weights[b] + rule.weights[n - 1 - b]);
    total += rule.weights[b];
  }
  rule.log_weights.resize(n);
  for (int b = 0; b < n; ++b) {
    rule.weights[b] /= total;
    rule.log_weights[b] = std::log(rule.weights[b]);
  }
  return rule;
}

}  // namespace gmpvi
