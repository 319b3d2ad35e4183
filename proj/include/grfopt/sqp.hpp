#ifndef GRFOPT_SQP_HPP
#define GRFOPT_SQP_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"

namespace grfopt {

/// Damped BFGS update of a positive definite Hessian approximation.
///
/// Uses Powell damping: when s^T y < 0.2 s^T H s the gradient change is
/// replaced by a blend r = theta y + (1 - theta) H s that keeps the update
/// positive definite. A zero step leaves H unchanged.
inline Eigen::MatrixXd bfgs_update(const Eigen::MatrixXd& h, const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
  if (s.size() != h.rows() || y.size() != h.rows()) throw InvalidArgument("bfgs_update: dimension mismatch");
  if (s.norm() == 0.0) return h;
  const Eigen::VectorXd hs = h * s;
  const double shs = s.dot(hs);
  if (!(shs > 0.0)) return h;
  const double sy = s.dot(y);
  Eigen::VectorXd r = y;
  if (sy < 0.2 * shs) {
    const double theta = 0.8 * shs / (shs - sy);
    r = theta * y + (1.0 - theta) * hs;
  }
  const double sr = s.dot(r);
  Eigen::MatrixXd out = h - hs * hs.transpose() / shs + r * r.transpose() / sr;
  return 0.5 * (out + out.transpose());
}

/// Solution of one quadratic subproblem.
struct QPResult {
  Eigen::VectorXd step;
  Eigen::VectorXd equality_multipliers; ///< lambda, one per equality row
  Eigen::VectorXd bound_multipliers;    ///< nu, positive at an active lower bound, negative at an active upper bound
};

namespace detail {

struct QPConstraint {
  Eigen::VectorXd normal;
  double rhs = 0.0;
  bool equality = false;
  bool flipped = false;
  Eigen::Index index = 0; ///< equality row or variable
  int side = 0;           ///< +1 lower bound, -1 upper bound, 0 equality
};

} // namespace detail

/**
 * Minimizes 1/2 d^T H d + g^T d subject to A (p + d) = b and
 * lower <= p + d <= upper, with H positive definite.
 *
 * Dual active-set method of Goldfarb and Idnani: starts from the
 * unconstrained minimizer and adds violated constraints one at a time,
 * dropping inequalities whose multipliers would turn negative. No feasible
 * starting point is needed and infeasibility is detected when a violated
 * constraint cannot be reached. Throws InfeasibleSubproblemError.
 */
inline QPResult solve_qp(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const Eigen::MatrixXd& a,
                         const Eigen::VectorXd& b, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                         const Eigen::VectorXd& point) {
  const Eigen::Index n = g.size();
  if (h.rows() != n || h.cols() != n || point.size() != n || lower.size() != n || upper.size() != n ||
      a.rows() != b.size() || (a.rows() > 0 && a.cols() != n)) {
    throw InvalidArgument("solve_qp: dimension mismatch");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success) throw InvalidArgument("solve_qp: Hessian is not positive definite");
  const Eigen::MatrixXd ginv = llt.solve(Eigen::MatrixXd::Identity(n, n));

  std::vector<detail::QPConstraint> cons;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    cons.push_back({a.row(i).transpose(), b(i) - a.row(i).dot(point), true, false, i, 0});
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(lower(j))) {
      cons.push_back({Eigen::VectorXd::Unit(n, j), lower(j) - point(j), false, false, j, +1});
    }
    if (std::isfinite(upper(j))) {
      cons.push_back({-Eigen::VectorXd::Unit(n, j), point(j) - upper(j), false, false, j, -1});
    }
  }

  Eigen::VectorXd x = -ginv * g;
  std::vector<std::size_t> active;
  std::vector<double> mult;
  std::vector<bool> is_active(cons.size(), false);

  auto slack = [&](const detail::QPConstraint& c) { return c.normal.dot(x) - c.rhs; };

  // Primal direction z and dual direction r for adding normal np to the active set.
  auto directions = [&](const Eigen::VectorXd& np, Eigen::VectorXd& z, Eigen::VectorXd& r) {
    const auto q = static_cast<Eigen::Index>(active.size());
    if (q == 0) {
      z = ginv * np;
      r.resize(0);
      return;
    }
    Eigen::MatrixXd nmat(n, q);
    for (Eigen::Index k = 0; k < q; ++k) nmat.col(k) = cons[active[static_cast<std::size_t>(k)]].normal;
    const Eigen::MatrixXd gn = ginv * nmat;
    const Eigen::MatrixXd m = nmat.transpose() * gn;
    r = m.colPivHouseholderQr().solve(gn.transpose() * np);
    z = ginv * np - gn * r;
  };

  auto drop = [&](std::size_t k, std::vector<double>& u) {
    is_active[active[k]] = false;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(k));
    u.erase(u.begin() + static_cast<std::ptrdiff_t>(k));
  };

  const double inf = std::numeric_limits<double>::infinity();
  int guard = 0;
  const int guard_limit = 50 * static_cast<int>(cons.size() + 10);

  // Adds constraint p, moving x to satisfy it. Returns false if it is a redundant equality.
  auto add = [&](std::size_t p) -> bool {
    auto& c = cons[p];
    std::vector<double> u = mult;
    u.push_back(0.0);
    const double curvature_scale = c.normal.dot(ginv * c.normal);
    while (true) {
      if (++guard > guard_limit) throw InfeasibleSubproblemError("QP active-set iteration limit reached (cycling)");
      Eigen::VectorXd z;
      Eigen::VectorXd r;
      directions(c.normal, z, r);
      double t1 = inf;
      std::size_t blocking = 0;
      for (std::size_t k = 0; k < active.size(); ++k) {
        if (cons[active[k]].equality) continue;
        const double rk = r(static_cast<Eigen::Index>(k));
        if (rk > 0.0) {
          const double ratio = u[k] / rk;
          if (ratio < t1) {
            t1 = ratio;
            blocking = k;
          }
        }
      }
      const double zn = z.dot(c.normal);
      const double s = slack(c);
      const double t2 = zn > 1e-13 * curvature_scale ? -s / zn : inf;
      const double t = std::min(t1, t2);
      if (t == inf) {
        if (c.equality && std::abs(s) <= 1e-10 * (1.0 + std::abs(c.rhs))) return false;
        throw InfeasibleSubproblemError(c.equality ? "QP equality constraints are inconsistent"
                                                   : "QP constraints are infeasible");
      }
      for (std::size_t k = 0; k < active.size(); ++k) u[k] -= t * r(static_cast<Eigen::Index>(k));
      u.back() += t;
      if (t2 == inf) {
        drop(blocking, u);
        continue;
      }
      x += t * z;
      if (t2 <= t1) {
        active.push_back(p);
        is_active[p] = true;
        mult = std::move(u);
        return true;
      }
      drop(blocking, u);
    }
  };

  for (std::size_t p = 0; p < cons.size(); ++p) {
    if (!cons[p].equality) continue;
    if (slack(cons[p]) > 0.0) {
      cons[p].normal = -cons[p].normal;
      cons[p].rhs = -cons[p].rhs;
      cons[p].flipped = true;
    }
    add(p);
  }
  while (true) {
    double worst = 0.0;
    std::size_t pick = cons.size();
    for (std::size_t p = 0; p < cons.size(); ++p) {
      if (cons[p].equality || is_active[p]) continue;
      const double s = slack(cons[p]);
      const double tol = 1e-12 * (1.0 + std::abs(cons[p].rhs));
      if (s < -tol && s < worst) {
        worst = s;
        pick = p;
      }
    }
    if (pick == cons.size()) break;
    add(pick);
  }

  QPResult out{x, Eigen::VectorXd::Zero(a.rows()), Eigen::VectorXd::Zero(n)};
  for (std::size_t k = 0; k < active.size(); ++k) {
    const auto& c = cons[active[k]];
    if (c.equality) {
      out.equality_multipliers(c.index) = c.flipped ? -mult[k] : mult[k];
    } else {
      out.bound_multipliers(c.index) += c.side * mult[k];
      out.step(c.index) = c.side > 0 ? lower(c.index) - point(c.index) : upper(c.index) - point(c.index);
    }
  }
  return out;
}

/// Objective callbacks. value_and_gradient may also update internal state (e.g. a reference basis).
struct Objective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> value_and_gradient;
};

/// Placeholder for general nonlinear constraints, which this solver rejects.
struct NonlinearConstraint {
  std::string name;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> eval;
  bool equality = false;
};

struct OptimizationSpec {
  Objective objective;
  Eigen::MatrixXd equality_matrix; ///< A in A p = b, zero rows when absent
  Eigen::VectorXd equality_rhs;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::VectorXd initial;
  double kkt_tol = 1e-6;
  double step_tol = 1e-10;
  int max_iter = 200;
  std::vector<NonlinearConstraint> nonlinear_constraints;
};

enum class OptimizationStatus { converged, step_tolerance, iteration_limit, linesearch_failure };

inline std::string_view to_string(OptimizationStatus s) {
  switch (s) {
  case OptimizationStatus::converged: return "converged";
  case OptimizationStatus::step_tolerance: return "step-tolerance";
  case OptimizationStatus::iteration_limit: return "iteration-limit";
  case OptimizationStatus::linesearch_failure: return "linesearch-failure";
  }
  return "unknown";
}

struct IterationRecord {
  int iteration = 0;
  double value = 0.0;
  double step_norm = 0.0;
  double kkt = 0.0;
  int backtracks = 0;
  double merit = 0.0;
  // merit of the previous iterate under the penalty used for this step
  double reference_merit = 0.0;
};

struct OptimizationResult {
  Eigen::VectorXd solution;
  Eigen::VectorXd gradient;
  double value = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  OptimizationStatus status = OptimizationStatus::iteration_limit;
  std::vector<IterationRecord> history;
};

/**
 * First-order optimality measure for bounds plus linear equalities.
 *
 * Equality multipliers are fitted by least squares on the variables that
 * are off their bounds; the residual is the largest stationarity or sign
 * violation, or the equality violation if larger.
 */
inline double kkt_residual(const Eigen::VectorXd& gradient, const Eigen::VectorXd& p, const Eigen::MatrixXd& a,
                           const Eigen::VectorXd& b, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  const Eigen::Index n = p.size();
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(lower(i)) && p(i) - lower(i) <= 1e-9 * (1.0 + std::abs(lower(i)))) state[static_cast<std::size_t>(i)] = 1;
    else if (std::isfinite(upper(i)) && upper(i) - p(i) <= 1e-9 * (1.0 + std::abs(upper(i)))) state[static_cast<std::size_t>(i)] = -1;
    else free.push_back(i);
  }
  Eigen::VectorXd r = gradient;
  double feasibility = 0.0;
  if (a.rows() > 0) {
    feasibility = (a * p - b).cwiseAbs().maxCoeff();
    Eigen::MatrixXd af(a.rows(), static_cast<Eigen::Index>(free.size()));
    Eigen::VectorXd gf(static_cast<Eigen::Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) {
      af.col(static_cast<Eigen::Index>(k)) = a.col(free[k]);
      gf(static_cast<Eigen::Index>(k)) = gradient(free[k]);
    }
    const Eigen::VectorXd lambda = free.empty() ? Eigen::VectorXd(a.transpose().colPivHouseholderQr().solve(gradient))
                                                : Eigen::VectorXd(af.transpose().colPivHouseholderQr().solve(gf));
    r -= a.transpose() * lambda;
  }
  double stationarity = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int st = state[static_cast<std::size_t>(i)];
    const double v = st == 0 ? std::abs(r(i)) : (st > 0 ? std::max(0.0, -r(i)) : std::max(0.0, r(i)));
    stationarity = std::max(stationarity, v);
  }
  return std::max(stationarity, feasibility);
}

/**
 * SQP with damped BFGS Hessian approximation for
 *
 *   min f(p)  s.t.  A p = b,  lower <= p <= upper.
 *
 * Each iteration solves the QP with linearized constraints for a step d,
 * then backtracks (Armijo, c1 = 1e-4, factor 1/2, at most 40 halvings) on
 * the l1 merit f + mu |A p - b|_1 with mu = max(mu, 2 |lambda|_inf + 1).
 * Iterates always satisfy the bounds.
 */
inline OptimizationResult minimize(const OptimizationSpec& spec) {
  if (!spec.nonlinear_constraints.empty()) {
    throw InvalidArgument("general nonlinear constraints are not supported; only linear equalities and bounds");
  }
  if (!spec.objective.value || !spec.objective.value_and_gradient) throw InvalidArgument("objective callbacks missing");
  const Eigen::Index n = spec.initial.size();
  if (spec.lower.size() != n || spec.upper.size() != n) throw InvalidArgument("bounds do not match the initial point");
  const Eigen::MatrixXd a = spec.equality_matrix.rows() > 0 ? spec.equality_matrix : Eigen::MatrixXd(0, n);
  const Eigen::VectorXd b = spec.equality_matrix.rows() > 0 ? spec.equality_rhs : Eigen::VectorXd(0);
  if (a.cols() != n || a.rows() != b.size()) throw InvalidArgument("equality constraints do not match the initial point");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (spec.lower(i) > spec.upper(i)) throw InvalidArgument("lower bound exceeds upper bound at " + std::to_string(i));
  }

  auto guarded = [&](auto&& call, const Eigen::VectorXd& at) {
    try {
      return call();
    } catch (const std::exception& e) {
      throw CallbackError(std::string("objective failed: ") + e.what(), std::vector<double>(at.data(), at.data() + at.size()));
    }
  };
  auto l1 = [&](const Eigen::VectorXd& p) { return a.rows() > 0 ? (a * p - b).lpNorm<1>() : 0.0; };
  auto l1_inf = [&](const Eigen::VectorXd& p) { return a.rows() > 0 ? (a * p - b).lpNorm<Eigen::Infinity>() : 0.0; };

  OptimizationResult res;
  Eigen::VectorXd p = spec.initial.cwiseMax(spec.lower).cwiseMin(spec.upper);
  Eigen::VectorXd g(n);
  double f = guarded([&] { return spec.objective.value_and_gradient(p, g); }, p);
  if (!std::isfinite(f) || !g.allFinite()) throw CallbackError("objective not finite at the initial point", {p.data(), p.data() + n});

  const double scale = std::clamp(std::abs(f) / std::max(1.0, g.squaredNorm()), 1e-4, 1e4);
  Eigen::MatrixXd hess = scale * Eigen::MatrixXd::Identity(n, n);
  double mu = 1.0;
  double step_norm = 0.0;
  int backtracks = 0;
  double reference = f + mu * l1(p);

  for (int iter = 0;; ++iter) {
    const double kkt = kkt_residual(g, p, a, b, spec.lower, spec.upper);
    res.history.push_back({iter, f, step_norm, kkt, backtracks, f + mu * l1(p), reference});
    res.iterations = iter;
    if (kkt <= spec.kkt_tol && l1_inf(p) <= 1e-8) {
      res.status = OptimizationStatus::converged;
      break;
    }
    if (iter >= spec.max_iter) {
      res.status = OptimizationStatus::iteration_limit;
      break;
    }
    const QPResult qp = solve_qp(hess, g, a, b, spec.lower, spec.upper, p);
    const Eigen::VectorXd& d = qp.step;
    if (d.lpNorm<Eigen::Infinity>() <= spec.step_tol) {
      res.status = OptimizationStatus::step_tolerance;
      break;
    }
    if (qp.equality_multipliers.size() > 0) mu = std::max(mu, 2.0 * qp.equality_multipliers.lpNorm<Eigen::Infinity>() + 1.0);
    const double merit0 = f + mu * l1(p);
    reference = merit0;
    const double slope = g.dot(d) - mu * l1(p);

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    backtracks = 0;
    for (; backtracks <= 40; ++backtracks) {
      trial = (p + alpha * d).cwiseMax(spec.lower).cwiseMin(spec.upper);
      const double ft = guarded([&] { return spec.objective.value(trial); }, trial);
      if (std::isfinite(ft) && ft + mu * l1(trial) <= merit0 + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      res.status = OptimizationStatus::linesearch_failure;
      break;
    }
    Eigen::VectorXd g_new(n);
    const double f_new = guarded([&] { return spec.objective.value_and_gradient(trial, g_new); }, trial);
    if (f_new + mu * l1(trial) > merit0) throw NumericalDomainError("merit function increased across an accepted step");
    const Eigen::VectorXd s = trial - p;
    hess = bfgs_update(hess, s, g_new - g);
    step_norm = s.norm();
    p = trial;
    f = f_new;
    g = g_new;
    if (s.lpNorm<Eigen::Infinity>() <= spec.step_tol) {
      const double k2 = kkt_residual(g, p, a, b, spec.lower, spec.upper);
      res.history.push_back({iter + 1, f, step_norm, k2, backtracks, f + mu * l1(p), reference});
      res.iterations = iter + 1;
      res.status = k2 <= spec.kkt_tol && l1_inf(p) <= 1e-8 ? OptimizationStatus::converged : OptimizationStatus::step_tolerance;
      break;
    }
  }
  res.solution = p;
  res.gradient = g;
  res.value = f;
  res.kkt_residual = res.history.back().kkt;
  return res;
}

} // namespace grfopt

#endif // GRFOPT_SQP_HPP
