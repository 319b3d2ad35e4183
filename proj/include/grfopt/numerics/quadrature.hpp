#ifndef GRFOPT_NUMERICS_QUADRATURE_HPP
#define GRFOPT_NUMERICS_QUADRATURE_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "grfopt/errors.hpp"

namespace grfopt {

/// Gauss-Legendre nodes and weights on [-1,1], ascending nodes.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order) {
  if (order < 1) throw InvalidArgument("Gauss-Legendre order must be positive");
  std::vector<double> nodes(static_cast<std::size_t>(order));
  std::vector<double> weights(static_cast<std::size_t>(order));
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int j = 0; j < order; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      const double step = p0 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    nodes[static_cast<std::size_t>(i)] = -z;
    nodes[static_cast<std::size_t>(order - 1 - i)] = z;
    weights[static_cast<std::size_t>(i)] = w;
    weights[static_cast<std::size_t>(order - 1 - i)] = w;
  }
  if (order % 2 == 1) nodes[static_cast<std::size_t>(order / 2)] = 0.0;
  return {nodes, weights};
}

/// Composite Gauss-Legendre rule on [0,1] with equal subintervals.
class QuadratureRule {
public:
  QuadratureRule(int intervals, int nodes_per_interval)
      : intervals_(intervals), nodes_per_interval_(nodes_per_interval) {
    if (intervals < 1 || nodes_per_interval < 1) {
      throw InvalidArgument("quadrature needs at least one interval and one node per interval");
    }
    const auto [ref_nodes, ref_weights] = gauss_legendre(nodes_per_interval);
    const double h = 1.0 / intervals;
    nodes_.reserve(static_cast<std::size_t>(intervals * nodes_per_interval));
    weights_.reserve(nodes_.capacity());
    for (int k = 0; k < intervals; ++k) {
      const double a = k * h;
      for (std::size_t j = 0; j < ref_nodes.size(); ++j) {
        nodes_.push_back(a + 0.5 * h * (ref_nodes[j] + 1.0));
        weights_.push_back(0.5 * h * ref_weights[j]);
      }
    }
  }

  int intervals() const { return intervals_; }
  int nodes_per_interval() const { return nodes_per_interval_; }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return nodes_.size(); }

private:
  int intervals_;
  int nodes_per_interval_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Sum of w_i f(x_i). Throws NumericalDomainError naming the first node where f is not finite.
template <typename F>
double integrate(const QuadratureRule& rule, F&& f) {
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double x = rule.nodes()[i];
    const double v = f(x);
    if (!std::isfinite(v)) {
      throw NumericalDomainError("integrand not finite at quadrature node " + std::to_string(i) +
                                 " (x = " + std::to_string(x) + ")");
    }
    sum += rule.weights()[i] * v;
  }
  return sum;
}

} // namespace grfopt

#endif // GRFOPT_NUMERICS_QUADRATURE_HPP
