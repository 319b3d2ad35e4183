#ifndef GRFOPT_RANDOMFIELD_HPP
#define GRFOPT_RANDOMFIELD_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/quadrature.hpp"

namespace grfopt {

/// Discretization of X = [0,1]: ordered points with positive quadrature weights summing to 1.
class Grid1D {
public:
  Grid1D(std::vector<double> points, std::vector<double> weights)
      : points_(std::move(points)), weights_(std::move(weights)) {
    if (points_.empty()) throw InvalidArgument("grid has no points");
    if (points_.size() != weights_.size()) throw InvalidArgument("grid points and weights differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!std::isfinite(points_[i]) || points_[i] < 0.0 || points_[i] > 1.0) {
        throw InvalidArgument("grid point " + std::to_string(i) + " outside [0,1]");
      }
      if (i > 0 && !(points_[i] > points_[i - 1])) throw InvalidArgument("grid points not strictly increasing");
      if (!(weights_[i] > 0.0)) throw InvalidArgument("grid weight " + std::to_string(i) + " not positive");
      total += weights_[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("grid weights sum to " + std::to_string(total));
  }

  /// n equally spaced points including both ends, each weighted 1/n.
  static Grid1D uniform(std::size_t n) {
    if (n < 2) throw InvalidArgument("uniform grid needs at least 2 points");
    std::vector<double> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = static_cast<double>(i) / static_cast<double>(n - 1);
    return {std::move(pts), std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  /// Nystrom grid on the nodes of a quadrature rule.
  static Grid1D from_quadrature(const QuadratureRule& rule) { return {rule.nodes(), rule.weights()}; }

  const std::vector<double>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return points_.size(); }

  Eigen::Map<const Eigen::VectorXd> weight_vector() const {
    return {weights_.data(), static_cast<Eigen::Index>(weights_.size())};
  }

private:
  std::vector<double> points_;
  std::vector<double> weights_;
};

enum class KernelKind { squared_exponential, exponential, scaled_nonstationary };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
  case KernelKind::squared_exponential: return "squared-exponential";
  case KernelKind::exponential: return "exponential";
  case KernelKind::scaled_nonstationary: return "scaled-nonstationary";
  }
  return "unknown";
}

inline KernelKind kernel_kind_from_string(std::string_view name) {
  if (name == "squared-exponential") return KernelKind::squared_exponential;
  if (name == "exponential") return KernelKind::exponential;
  if (name == "scaled-nonstationary") return KernelKind::scaled_nonstationary;
  throw InvalidArgument("unknown kernel kind '" + std::string(name) + "'");
}

/**
 * Covariance function family.
 *
 * The stationary kinds have unit variance. The scaled-nonstationary kind is
 * C(x1,x2) = sigma(x1) sigma(x2) rho(x1,x2) with a squared-exponential rho
 * and sigma a cubic spline. Parameters are numbered for differentiation:
 * index 0 is the correlation length, indices 1..N are the sigma coefficients.
 */
class CovarianceModel {
public:
  static CovarianceModel squared_exponential(double length) {
    return CovarianceModel(KernelKind::squared_exponential, length, std::nullopt);
  }
  static CovarianceModel exponential(double length) {
    return CovarianceModel(KernelKind::exponential, length, std::nullopt);
  }
  static CovarianceModel scaled(double length, SplineField scale) {
    return CovarianceModel(KernelKind::scaled_nonstationary, length, std::move(scale));
  }

  KernelKind kind() const { return kind_; }
  double correlation_length() const { return length_; }
  const std::optional<SplineField>& scale_field() const { return scale_; }

  /// Same correlation with unit variance.
  CovarianceModel unit_variance() const {
    if (kind_ == KernelKind::scaled_nonstationary) return squared_exponential(length_);
    return *this;
  }

  std::size_t parameter_count() const { return 1 + (scale_ ? scale_->basis.size() : 0); }

  double correlation(double x1, double x2) const {
    const double d = x1 - x2;
    if (kind_ == KernelKind::exponential) return std::exp(-std::abs(d) / length_);
    return std::exp(-d * d / (2.0 * length_ * length_));
  }

  double scale(double x) const { return scale_ ? spline_eval(*scale_, x) : 1.0; }

private:
  CovarianceModel(KernelKind kind, double length, std::optional<SplineField> scale)
      : kind_(kind), length_(length), scale_(std::move(scale)) {
    if (!std::isfinite(length) || !(length > 0.0)) {
      throw InvalidArgument("correlation length must be positive and finite");
    }
    if (scale_ && !scale_->coefficients.allFinite()) throw InvalidArgument("scale field has non-finite coefficients");
  }

  KernelKind kind_;
  double length_;
  std::optional<SplineField> scale_;
};

/// Dense covariance over the points of a grid.
struct CovarianceMatrix {
  Eigen::MatrixXd entries;
  Grid1D grid;
};

inline double eval_kernel(const CovarianceModel& model, double x1, double x2) {
  if (!std::isfinite(x1) || !std::isfinite(x2)) throw InvalidArgument("kernel evaluated at non-finite coordinate");
  if (x1 < 0.0 || x1 > 1.0 || x2 < 0.0 || x2 > 1.0) throw InvalidArgument("kernel coordinate outside [0,1]");
  return model.scale(x1) * model.scale(x2) * model.correlation(x1, x2);
}

namespace detail {

inline Eigen::VectorXd scale_on_grid(const CovarianceModel& model, const Grid1D& grid) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) s(static_cast<Eigen::Index>(i)) = model.scale(grid.points()[i]);
  return s;
}

} // namespace detail

/// Unit-variance correlation matrix R_ij = rho(x_i, x_j).
inline Eigen::MatrixXd assemble_correlation(const CovarianceModel& model, const Grid1D& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto& x = grid.points();
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = model.correlation(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]);
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

/// C_ij = sigma(x_i) sigma(x_j) rho(x_i, x_j) given the correlation and the scale on the grid.
inline Eigen::MatrixXd scale_correlation(const Eigen::MatrixXd& correlation, const Eigen::VectorXd& scale) {
  const Eigen::Index n = correlation.rows();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) c(i, j) = (scale(i) * scale(j)) * correlation(i, j);
  }
  return c;
}

inline CovarianceMatrix assemble_covariance(const CovarianceModel& model, const Grid1D& grid) {
  const Eigen::MatrixXd r = assemble_correlation(model, grid);
  if (!model.scale_field()) return {r, grid};
  return {scale_correlation(r, detail::scale_on_grid(model, grid)), grid};
}

/**
 * Exact derivative of the assembled covariance with respect to one model
 * parameter (index 0: correlation length; index k >= 1: sigma coefficient k-1).
 *
 *   dC_ij/dL       = C_ij (x_i - x_j)^2 / L^3
 *   dC_ij/dsigma_k = [B_k(x_i) sigma(x_j) + sigma(x_i) B_k(x_j)] rho_ij
 *
 * The exponential kernel is not differentiable at zero lag and is rejected.
 */
inline Eigen::MatrixXd covariance_param_derivative(const CovarianceModel& model, const Grid1D& grid,
                                                   std::size_t param_index) {
  if (model.kind() == KernelKind::exponential) {
    throw InvalidArgument("the exponential kernel is excluded from sensitivity computations");
  }
  if (param_index >= model.parameter_count()) {
    throw InvalidArgument("covariance parameter index " + std::to_string(param_index) + " out of range (" +
                          std::to_string(model.parameter_count()) + " parameters)");
  }
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto& x = grid.points();
  const Eigen::MatrixXd r = assemble_correlation(model, grid);
  const Eigen::VectorXd s = detail::scale_on_grid(model, grid);
  if (param_index == 0) {
    const double l3 = std::pow(model.correlation_length(), 3);
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double dx = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
        d(i, j) = s(i) * s(j) * r(i, j) * dx * dx / l3;
      }
    }
    return d;
  }
  const std::size_t k = param_index - 1;
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b(i) = model.scale_field()->basis.evaluate(k, x[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd outer = b * s.transpose();
  return (outer + outer.transpose()).cwiseProduct(r);
}

} // namespace grfopt

#endif // GRFOPT_RANDOMFIELD_HPP
