#ifndef GRFOPT_PROBLEMS_HPP
#define GRFOPT_PROBLEMS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/quadrature.hpp"
#include "grfopt/saa.hpp"
#include "grfopt/sensitivity.hpp"
#include "grfopt/sqp.hpp"

namespace grfopt {

using WeightFunction = std::function<double(double)>;

/// w(x) = 2 + sin(2 pi x).
inline double sine_weight(double x) { return 2.0 + std::sin(2.0 * std::numbers::pi * x); }

/// Surrogate loss weight concentrated near x = 0: 1 + 9 exp(-x^2 / (2 * 0.05^2)).
inline double leading_edge_weight(double x) { return 1.0 + 9.0 * std::exp(-x * x / (2.0 * 0.05 * 0.05)); }

inline Eigen::VectorXd weight_on_nodes(const WeightFunction& w, const QuadratureRule& rule) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rule.size()));
  for (std::size_t j = 0; j < rule.size(); ++j) out(static_cast<Eigen::Index>(j)) = w(rule.nodes()[j]);
  return out;
}

/// sum_j q_j w_j e_j^2, the quadrature of e^2 w along one path given on the rule's nodes.
inline double f1_per_sample(std::span<const double> path, const Eigen::VectorXd& weight_at_nodes,
                            const QuadratureRule& rule) {
  if (path.size() != rule.size() || static_cast<std::size_t>(weight_at_nodes.size()) != rule.size()) {
    throw InvalidArgument("path, weights and quadrature rule disagree in size");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < path.size(); ++j) {
    sum += rule.weights()[j] * weight_at_nodes(static_cast<Eigen::Index>(j)) * path[j] * path[j];
  }
  return sum;
}

/// PathFunctional for F(e) = integral of e^2 w, with its exact gradient and Hessian diagonal.
inline PathFunctional weighted_square_functional(const WeightFunction& w, const QuadratureRule& rule) {
  const Eigen::VectorXd wq = weight_on_nodes(w, rule);
  Eigen::VectorXd coeff(wq.size());
  for (Eigen::Index j = 0; j < wq.size(); ++j) coeff(j) = rule.weights()[static_cast<std::size_t>(j)] * wq(j);
  PathFunctional f;
  f.value = [wq, rule](std::span<const double> e) { return f1_per_sample(e, wq, rule); };
  f.gradient = [coeff](std::span<const double> e, std::span<double> out) {
    for (std::size_t j = 0; j < e.size(); ++j) out[j] = 2.0 * coeff(static_cast<Eigen::Index>(j)) * e[j];
  };
  f.hessian_diagonal = [coeff](std::span<const double>, std::span<double> out) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = 2.0 * coeff(static_cast<Eigen::Index>(j));
  };
  return f;
}

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// f2 = integral of 1/sigma by the quadrature rule, with gradient -integral B_k / sigma^2.
inline ValueAndGradient f2(const SplineField& sigma, const QuadratureRule& rule, double sigma_min = 0.0) {
  ValueAndGradient out{0.0, Eigen::VectorXd::Zero(sigma.coefficients.size())};
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double x = rule.nodes()[j];
    const double s = spline_eval(sigma, x);
    if (!(s >= sigma_min) || !(s > 0.0)) {
      throw BoundViolationError("sigma(" + std::to_string(x) + ") = " + std::to_string(s) + " is below the minimum " +
                                std::to_string(sigma_min));
    }
    const double q = rule.weights()[j];
    out.value += q / s;
    const auto [first, values] = sigma.basis.nonzero(x);
    for (int r = 0; r <= SplineBasis::degree; ++r) {
      out.gradient(static_cast<Eigen::Index>(first + r)) -= q * values[r] / (s * s);
    }
  }
  return out;
}

/// Hessian of f2 in the spline coefficients: 2 integral B_k B_l / sigma^3.
inline Eigen::MatrixXd f2_hessian(const SplineField& sigma, const QuadratureRule& rule) {
  const auto n = sigma.coefficients.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double x = rule.nodes()[j];
    const double s = spline_eval(sigma, x);
    const Eigen::VectorXd b = sigma.basis.evaluate(x);
    h += (2.0 * rule.weights()[j] / (s * s * s)) * b * b.transpose();
  }
  return h;
}

/// Closed-form minimizer of integral (sigma^2 w + 1/sigma): sigma*(x) = (1 / (2 w(x)))^{1/3}.
inline double analytic_optimum(double weight) {
  if (!(weight > 0.0)) throw InvalidArgument("weight must be positive for the analytic optimum");
  return std::cbrt(1.0 / (2.0 * weight));
}

/// Exact expectation of f1 for a zero-mean field with standard deviation sigma: integral sigma^2 w.
inline double analytic_f1(const SplineField& sigma, const WeightFunction& w, const QuadratureRule& rule) {
  return integrate(rule, [&](double x) {
    const double s = spline_eval(sigma, x);
    return s * s * w(x);
  });
}

/// Gradient of the exact f1 in the spline coefficients: integral 2 sigma w B_k.
inline Eigen::VectorXd analytic_f1_gradient(const SplineField& sigma, const WeightFunction& w,
                                            const QuadratureRule& rule) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(sigma.coefficients.size());
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double x = rule.nodes()[j];
    g += (2.0 * rule.weights()[j] * spline_eval(sigma, x) * w(x)) * sigma.basis.evaluate(x);
  }
  return g;
}

/// V(sigma) = integral of sigma; linear in the coefficients with gradient integral B_k.
inline ValueAndGradient variability_metric(const SplineField& sigma, const QuadratureRule& rule) {
  ValueAndGradient out{0.0, Eigen::VectorXd::Zero(sigma.coefficients.size())};
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double x = rule.nodes()[j];
    out.gradient += rule.weights()[j] * sigma.basis.evaluate(x);
  }
  out.value = out.gradient.dot(sigma.coefficients);
  return out;
}

/// Variance optimization model problem: minimize E[integral e^2 w] + integral 1/sigma over sigma(x).
struct VarianceProblem {
  WeightFunction weight = sine_weight;
  QuadratureRule rule{20, 2};
  std::size_t sigma_basis_size = 20;
  std::size_t mean_basis_size = 0; ///< 0 keeps a zero-mean field
  double correlation_length = 0.1;
  double sigma_min = 0.2;
  double sigma_init = 1.0;
  double scatter_threshold = 0.9999;
};

/// An SAA problem together with a ready-to-run optimizer specification.
struct SAASetup {
  std::shared_ptr<SAAProblem> saa; ///< null for exact-expectation objectives
  OptimizationSpec spec;
};

namespace detail {

inline Objective saa_objective(const std::shared_ptr<SAAProblem>& saa) {
  Objective obj;
  obj.value = [saa](const Eigen::VectorXd& p) { return saa->value(p); };
  obj.value_and_gradient = [saa](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
    const SAAEstimate est = saa->evaluate(p);
    saa->set_reference(p);
    g = est.gradient;
    return est.value;
  };
  return obj;
}

} // namespace detail

inline SAASetup build_variance_saa(const VarianceProblem& problem, std::uint64_t seed, Eigen::Index samples,
                                   SensitivityMethod method, std::size_t threads = 1) {
  if (samples < 1) throw InvalidArgument("need at least one sample");
  if (!(problem.sigma_min > 0.0)) throw InvalidArgument("sigma_min must be positive");
  if (!(problem.sigma_init >= problem.sigma_min)) throw InvalidArgument("initial sigma below sigma_min");
  FieldParameterization field{Grid1D::from_quadrature(problem.rule), problem.correlation_length,
                              SplineBasis(problem.sigma_basis_size), std::nullopt,
                              Truncation{problem.scatter_threshold, {}}};
  if (problem.mean_basis_size > 0) field.mean_basis.emplace(problem.mean_basis_size);
  const Eigen::Index nm = field.mean_count();
  const Eigen::Index ns = field.sigma_count();
  const Eigen::Index np = nm + ns;

  Eigen::VectorXd lower = Eigen::VectorXd::Constant(np, -std::numeric_limits<double>::infinity());
  Eigen::VectorXd upper = Eigen::VectorXd::Constant(np, std::numeric_limits<double>::infinity());
  lower.tail(ns).setConstant(problem.sigma_min);
  Eigen::VectorXd initial = Eigen::VectorXd::Zero(np);
  initial.tail(ns).setConstant(problem.sigma_init);

  const SplineBasis sigma_basis = field.sigma_basis;
  const QuadratureRule rule = problem.rule;
  const double sigma_min = problem.sigma_min;
  DeterministicTerm cost{[sigma_basis, rule, sigma_min, nm, ns](const Eigen::VectorXd& p, Eigen::VectorXd* grad,
                                                                Eigen::MatrixXd* hess) {
    const SplineField sigma(sigma_basis, p.tail(ns));
    const ValueAndGradient v = f2(sigma, rule, sigma_min);
    if (grad) grad->tail(ns) = v.gradient;
    if (hess) hess->bottomRightCorner(ns, ns) = f2_hessian(sigma, rule);
    return v.value;
  }};

  SAAOptions options{method, threads, lower, upper};
  auto saa = std::make_shared<SAAProblem>(std::move(field), weighted_square_functional(problem.weight, problem.rule), seed,
                                          samples, initial, options, std::move(cost));
  OptimizationSpec spec;
  spec.objective = detail::saa_objective(saa);
  spec.equality_matrix = Eigen::MatrixXd(0, np);
  spec.equality_rhs = Eigen::VectorXd(0);
  spec.lower = lower;
  spec.upper = upper;
  spec.initial = initial;
  return {saa, std::move(spec)};
}

enum class ExpectationMode { sampled, exact };

/**
 * Tolerance surrogate: minimize E[integral e^2 w_t] over sigma subject to
 * the variability budget V(sigma) = V_b and sigma_min <= sigma_k <= sigma_max.
 * Bounding the coefficients bounds sigma(x) because the basis is a
 * nonnegative partition of unity.
 */
struct ToleranceProblem {
  WeightFunction weight = leading_edge_weight;
  QuadratureRule rule{20, 2};
  std::size_t sigma_basis_size = 31;
  double correlation_length = 0.1;
  double sigma_base = 1.0;      ///< uniform baseline standard deviation
  double budget_fraction = 0.98; ///< V_b = budget_fraction * V(sigma_base)
  double sigma_max = 1.0;
  double sigma_min_fraction = 0.1; ///< sigma_min = fraction * sigma_base
  double scatter_threshold = 0.9999;
  ExpectationMode expectation = ExpectationMode::sampled;

  double sigma_min() const { return sigma_min_fraction * sigma_base; }
  double budget() const { return budget_fraction * sigma_base; }
};

inline SAASetup build_tolerance_saa(const ToleranceProblem& problem, std::uint64_t seed, Eigen::Index samples,
                                    std::size_t threads = 1) {
  if (samples < 1) throw InvalidArgument("need at least one sample");
  const SplineBasis basis(problem.sigma_basis_size);
  const auto ns = static_cast<Eigen::Index>(basis.size());
  const SplineField base = SplineField::constant(basis.size(), problem.sigma_base);
  const ValueAndGradient v_base = variability_metric(base, problem.rule);
  const double budget = problem.budget_fraction * v_base.value;
  const double lo = problem.sigma_min();
  const double hi = problem.sigma_max;
  if (!(problem.sigma_base > 0.0) || !(lo > 0.0) || !(hi >= lo)) throw InvalidArgument("invalid tolerance bounds");
  if (budget > v_base.value) throw InvalidArgument("budget exceeds the baseline variability");
  const double v_lo = v_base.gradient.sum() * lo;
  const double v_hi = v_base.gradient.sum() * hi;
  if (budget < v_lo || budget > v_hi) {
    throw InvalidArgument("variability budget " + std::to_string(budget) + " is infeasible under sigma bounds [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  OptimizationSpec spec;
  spec.equality_matrix = v_base.gradient.transpose();
  spec.equality_rhs = Eigen::VectorXd::Constant(1, budget);
  spec.lower = Eigen::VectorXd::Constant(ns, lo);
  spec.upper = Eigen::VectorXd::Constant(ns, hi);
  spec.initial = base.coefficients * (budget / v_base.value);

  if (problem.expectation == ExpectationMode::exact) {
    const Eigen::VectorXd wq = weight_on_nodes(problem.weight, problem.rule);
    const Eigen::MatrixXd bm = spline_basis_matrix(basis, problem.rule.nodes());
    Eigen::VectorXd q(wq.size());
    for (Eigen::Index j = 0; j < wq.size(); ++j) q(j) = problem.rule.weights()[static_cast<std::size_t>(j)] * wq(j);
    const Eigen::MatrixXd gram = bm.transpose() * q.asDiagonal() * bm;
    spec.objective.value = [gram](const Eigen::VectorXd& p) { return p.dot(gram * p); };
    spec.objective.value_and_gradient = [gram](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
      g = 2.0 * gram * p;
      return p.dot(gram * p);
    };
    return {nullptr, std::move(spec)};
  }

  FieldParameterization field{Grid1D::from_quadrature(problem.rule), problem.correlation_length, basis, std::nullopt,
                              Truncation{problem.scatter_threshold, {}}};
  SAAOptions options{SensitivityMethod::scaled, threads, spec.lower, spec.upper};
  auto saa = std::make_shared<SAAProblem>(std::move(field), weighted_square_functional(problem.weight, problem.rule), seed,
                                          samples, spec.initial, options);
  spec.objective = detail::saa_objective(saa);
  return {saa, std::move(spec)};
}

} // namespace grfopt

#endif // GRFOPT_PROBLEMS_HPP
