#pragma once

#include <vector>

namespace gmpvi {

/// Gauss-Hermite rule normalised against the standard normal density:
/// integral f(w) phi(w) dw ~= sum_b weights[b] * f(nodes[b]).
/// Nodes are sorted ascending and symmetric about zero; weights sum to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  /// log of each weight, cached for log-domain sums.
  std::vector<double> log_weights;

  int order() const { return static_cast<int>(nodes.size()); }

  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t b = 0; b < nodes.size(); ++b) acc += weights[b] * f(nodes[b]);
    return acc;
  }
};

inline constexpr int kMaxQuadratureOrder = 64;
inline constexpr int kDefaultQuadratureOrder = 20;

/// Golub-Welsch on the probabilists' Hermite Jacobi matrix followed by a
/// Newton polish of each node. Throws a config error unless 1 <= order <= 64.
QuadratureRule gauss_hermite_rule(int order);

}  // namespace gmpvi
