#ifndef GRFOPT_NUMERICS_BSPLINE_HPP
#define GRFOPT_NUMERICS_BSPLINE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"

namespace grfopt {

/**
 * Cubic B-spline basis on [0,1] with a clamped (open) uniform knot vector.
 *
 * With n basis functions there are n - 3 equal knot spans and the end knots
 * are repeated four times, so B_0(0) = 1 and B_{n-1}(1) = 1. The basis is a
 * partition of unity on [0,1] and every function is nonnegative.
 */
class SplineBasis {
public:
  static constexpr int degree = 3;

  explicit SplineBasis(std::size_t size) : size_(size) {
    if (size < 4) {
      throw InvalidArgument("cubic spline basis needs at least 4 functions, got " + std::to_string(size));
    }
    const std::size_t spans = size - degree;
    knots_.reserve(size + degree + 1);
    for (int i = 0; i < degree; ++i) knots_.push_back(0.0);
    for (std::size_t i = 0; i <= spans; ++i) knots_.push_back(static_cast<double>(i) / static_cast<double>(spans));
    for (int i = 0; i < degree; ++i) knots_.push_back(1.0);
  }

  std::size_t size() const { return size_; }
  const std::vector<double>& knots() const { return knots_; }

  /// Greville abscissae: the knot averages at which coefficients reproduce linears.
  std::vector<double> greville() const {
    std::vector<double> g(size_);
    for (std::size_t i = 0; i < size_; ++i) g[i] = (knots_[i + 1] + knots_[i + 2] + knots_[i + 3]) / 3.0;
    return g;
  }

  /// First index of the four functions that are nonzero at x, and their values.
  std::pair<std::size_t, std::array<double, 4>> nonzero(double x) const {
    check_coordinate(x);
    const std::size_t s = span(x);
    std::array<double, 4> values{1.0, 0.0, 0.0, 0.0};
    std::array<double, 4> left{};
    std::array<double, 4> right{};
    for (int j = 1; j <= degree; ++j) {
      left[j] = x - knots_[s + 1 - j];
      right[j] = knots_[s + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = values[r] / (right[r + 1] + left[j - r]);
        values[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      values[j] = saved;
    }
    return {s - degree, values};
  }

  /// All n basis values at x.
  Eigen::VectorXd evaluate(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size_));
    const auto [first, values] = nonzero(x);
    for (int r = 0; r <= degree; ++r) out(static_cast<Eigen::Index>(first + r)) = values[r];
    return out;
  }

  /// Value of basis function k at x.
  double evaluate(std::size_t k, double x) const {
    if (k >= size_) throw InvalidArgument("basis index " + std::to_string(k) + " out of range");
    const auto [first, values] = nonzero(x);
    if (k < first || k > first + degree) return 0.0;
    return values[k - first];
  }

private:
  static void check_coordinate(double x) {
    if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
      throw InvalidArgument("spline coordinate outside [0,1]: " + std::to_string(x));
    }
  }

  // Knot index s with knots[s] <= x < knots[s+1]; x = 1 maps to the last span.
  std::size_t span(double x) const {
    const std::size_t last = size_ - 1;
    if (x >= knots_[last + 1]) return last;
    std::size_t lo = degree;
    std::size_t hi = last + 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (x < knots_[mid]) hi = mid;
      else lo = mid;
    }
    return lo;
  }

  std::size_t size_;
  std::vector<double> knots_;
};

/// A spatial function sigma(x) = sum_i c_i B_i(x) on [0,1].
struct SplineField {
  SplineBasis basis;
  Eigen::VectorXd coefficients;

  SplineField(SplineBasis b, Eigen::VectorXd c) : basis(std::move(b)), coefficients(std::move(c)) {
    if (static_cast<std::size_t>(coefficients.size()) != basis.size()) {
      throw InvalidArgument("spline has " + std::to_string(basis.size()) + " basis functions but " +
                            std::to_string(coefficients.size()) + " coefficients");
    }
  }

  static SplineField constant(std::size_t size, double value) {
    return {SplineBasis(size), Eigen::VectorXd::Constant(static_cast<Eigen::Index>(size), value)};
  }

  double operator()(double x) const { return spline_eval(*this, x); }

  friend double spline_eval(const SplineField& field, double x) {
    const auto [first, values] = field.basis.nonzero(x);
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int r = 0; r <= SplineBasis::degree; ++r) {
      const double c = field.coefficients(static_cast<Eigen::Index>(first + r));
      sum += c * values[r];
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    // convex combination of the local coefficients; clamp away rounding excursions
    return std::clamp(sum, lo, hi);
  }
};

/// Rows index points, columns index basis functions.
inline Eigen::MatrixXd spline_basis_matrix(const SplineBasis& basis, std::span<const double> points) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()),
                                            static_cast<Eigen::Index>(basis.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    const auto [first, values] = basis.nonzero(points[j]);
    for (int r = 0; r <= SplineBasis::degree; ++r) {
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(first + r)) = values[r];
    }
  }
  return m;
}

inline Eigen::MatrixXd spline_basis_matrix(const SplineField& field, std::span<const double> points) {
  return spline_basis_matrix(field.basis, points);
}

} // namespace grfopt

#endif // GRFOPT_NUMERICS_BSPLINE_HPP
