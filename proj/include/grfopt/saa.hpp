#ifndef GRFOPT_SAA_HPP
#define GRFOPT_SAA_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "grfopt/errors.hpp"
#include "grfopt/kl.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/summation.hpp"
#include "grfopt/parallel.hpp"
#include "grfopt/randomfield.hpp"
#include "grfopt/sensitivity.hpp"

namespace grfopt {

/**
 * Output functional F(e) of one realization, given on the grid values of e.
 *
 * Pathwise gradients are unbiased only when F is Lipschitz in e and
 * differentiable almost surely along the sample paths, and the paths are
 * Lipschitz in the parameters with an integrable constant. Smooth
 * functionals of smooth parameterizations qualify. Indicator-type outputs
 * such as failure probabilities do not and must not be registered here.
 */
struct PathFunctional {
  std::function<double(std::span<const double>)> value;
  /// dF/de_j at every grid point.
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  /// Diagonal of d^2F/de^2 when F is separable over grid points; leave empty otherwise.
  std::function<void(std::span<const double>, std::span<double>)> hessian_diagonal;
};

/// Parameter-only term D(p) added to every sample (for example a cost of tight tolerances).
struct DeterministicTerm {
  std::function<double(const Eigen::VectorXd& p, Eigen::VectorXd* gradient, Eigen::MatrixXd* hessian)> eval;

  explicit operator bool() const { return static_cast<bool>(eval); }
};

/**
 * Gaussian field e(x) = mean(x) + sigma(x) e~(x) on a grid, where e~ has
 * unit variance and squared-exponential correlation. The parameter vector is
 * [mean spline coefficients, sigma spline coefficients].
 */
struct FieldParameterization {
  Grid1D grid;
  double correlation_length = 0.1;
  SplineBasis sigma_basis{20};
  std::optional<SplineBasis> mean_basis;
  Truncation truncation{};

  Eigen::Index mean_count() const { return mean_basis ? static_cast<Eigen::Index>(mean_basis->size()) : 0; }
  Eigen::Index sigma_count() const { return static_cast<Eigen::Index>(sigma_basis.size()); }
  Eigen::Index parameter_count() const { return mean_count() + sigma_count(); }
};

/// Monte Carlo estimate of E[F] and of its gradient at one parameter point.
struct SAAEstimate {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::VectorXd per_sample_values;
  Eigen::MatrixXd per_sample_gradients; ///< N x parameters
};

struct SAAOptions {
  SAAOptions(SensitivityMethod m = SensitivityMethod::scaled, std::size_t t = 1, std::optional<Eigen::VectorXd> lo = {},
             std::optional<Eigen::VectorXd> hi = {})
      : method(m), threads(t), lower(std::move(lo)), upper(std::move(hi)) {}

  SensitivityMethod method;
  std::size_t threads;
  std::optional<Eigen::VectorXd> lower; ///< admissible box, checked on every evaluation
  std::optional<Eigen::VectorXd> upper;
};

/**
 * Sample average approximation of E[F(e(p))] with the realizations fixed.
 *
 * The draws are generated once from the seed, so every evaluation during an
 * optimization run sees the same samples and the objective is a
 * deterministic function of p.
 *
 * With the scaled method the unit-variance expansion is built once and
 * e_n = mean + sigma * e~_n. With the eigen method the covariance
 * sigma(x1) sigma(x2) rho(x1,x2) is re-expanded at every p, its modes are
 * sign-aligned to a stored reference basis, and path derivatives come from
 * eigenpair perturbation. The truncation level is frozen at construction.
 */
class SAAProblem {
public:
  SAAProblem(FieldParameterization field, PathFunctional functional, std::uint64_t seed, Eigen::Index samples,
             const Eigen::VectorXd& initial, SAAOptions options = {}, DeterministicTerm extra = {})
      : field_(std::move(field)), functional_(std::move(functional)), extra_(std::move(extra)),
        options_(std::move(options)) {
    if (samples < 1) throw InvalidArgument("SAA needs at least one sample");
    if (!functional_.value || !functional_.gradient) throw InvalidArgument("functional needs value and gradient hooks");
    check_parameters(initial);
    const auto& pts = field_.grid.points();
    sigma_matrix_ = spline_basis_matrix(field_.sigma_basis, pts);
    if (field_.mean_basis) mean_matrix_ = spline_basis_matrix(*field_.mean_basis, pts);
    correlation_ = assemble_correlation(CovarianceModel::squared_exponential(field_.correlation_length), field_.grid);

    if (options_.method == SensitivityMethod::scaled) {
      const KLBasis unit(CovarianceMatrix{correlation_, field_.grid},
                         Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pts.size())), field_.truncation);
      draws_ = draw_realizations(seed, samples, unit.truncation_level());
      unit_paths_ = sample_paths(unit, draws_);
      modes_ = unit.truncation_level();
      scatter_ = unit.partial_scatter_value();
    } else {
      const KLBasis basis(covariance_at(initial), mean_at(initial), field_.truncation);
      modes_ = basis.truncation_level();
      scatter_ = basis.partial_scatter_value();
      reference_modes_ = basis.modes();
      draws_ = draw_realizations(seed, samples, modes_);
    }
  }

  const FieldParameterization& field() const { return field_; }
  const RealizationSet& draws() const { return draws_; }
  Eigen::Index samples() const { return draws_.samples(); }
  Eigen::Index modes() const { return modes_; }
  double partial_scatter() const { return scatter_; }
  SensitivityMethod method() const { return options_.method; }
  Eigen::Index parameter_count() const { return field_.parameter_count(); }

  /// Unit-variance realizations e~_n (scaled method only).
  const Eigen::MatrixXd& unit_paths() const { return unit_paths_; }

  /// Realizations e_n at p, one per row.
  Eigen::MatrixXd paths(const Eigen::VectorXd& p) const {
    check_parameters(p);
    const auto n = static_cast<Eigen::Index>(field_.grid.size());
    Eigen::MatrixXd out(samples(), n);
    const Eigen::VectorXd mean = mean_at(p);
    if (options_.method == SensitivityMethod::scaled) {
      const Eigen::VectorXd sigma = sigma_matrix_ * p.tail(field_.sigma_count());
      for (Eigen::Index s = 0; s < samples(); ++s) out.row(s) = (mean + sigma.cwiseProduct(unit_paths_.row(s).transpose())).transpose();
    } else {
      const KLBasis basis = aligned_basis(p);
      const Eigen::MatrixXd sm = scaled_modes(basis);
      Eigen::VectorXd row(n);
      for (Eigen::Index s = 0; s < samples(); ++s) {
        sample_path(mean, sm, draws_.draws.row(s), row);
        out.row(s) = row.transpose();
      }
    }
    return out;
  }

  /// Objective, gradient and per-sample terms at p.
  SAAEstimate evaluate(const Eigen::VectorXd& p) const { return run(p, true); }

  /// Objective only.
  double value(const Eigen::VectorXd& p) const { return run(p, false).value; }

  /// Eigen method: re-expand at p, align to the current reference, and keep the result as the new reference.
  void set_reference(const Eigen::VectorXd& p) {
    if (options_.method != SensitivityMethod::eigen) return;
    reference_modes_ = aligned_basis(p).modes();
  }

  /**
   * Mean of the per-sample Hessians. For the scaled method the paths are
   * linear in p, so the per-sample Hessian is J_n^T diag(F'') J_n plus the
   * deterministic term's Hessian. Otherwise, or when the functional lacks a
   * separable Hessian, falls back to central differences of the SAA
   * gradient with step `fd_step`.
   */
  Eigen::MatrixXd hessian_estimate(const Eigen::VectorXd& p, double fd_step = 1e-4) const {
    if (options_.method == SensitivityMethod::scaled && functional_.hessian_diagonal) return closed_form_hessian(p);
    const Eigen::Index np = parameter_count();
    Eigen::MatrixXd h(np, np);
    for (Eigen::Index k = 0; k < np; ++k) {
      Eigen::VectorXd plus = p;
      Eigen::VectorXd minus = p;
      plus(k) += fd_step;
      minus(k) -= fd_step;
      h.col(k) = (evaluate(plus).gradient - evaluate(minus).gradient) / (2.0 * fd_step);
    }
    return 0.5 * (h + h.transpose());
  }

private:
  void check_parameters(const Eigen::VectorXd& p) const {
    if (p.size() != field_.parameter_count()) {
      throw InvalidArgument("expected " + std::to_string(field_.parameter_count()) + " parameters, got " +
                            std::to_string(p.size()));
    }
    if (!p.allFinite()) throw InvalidArgument("parameters are not finite");
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if ((options_.lower && p(k) < (*options_.lower)(k)) || (options_.upper && p(k) > (*options_.upper)(k))) {
        throw BoundViolationError("parameter " + std::to_string(k) + " = " + std::to_string(p(k)) +
                                  " outside its admissible bounds");
      }
    }
  }

  Eigen::VectorXd mean_at(const Eigen::VectorXd& p) const {
    if (!field_.mean_basis) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(field_.grid.size()));
    return mean_matrix_ * p.head(field_.mean_count());
  }

  CovarianceModel model_at(const Eigen::VectorXd& p) const {
    return CovarianceModel::scaled(field_.correlation_length, SplineField(field_.sigma_basis, p.tail(field_.sigma_count())));
  }

  CovarianceMatrix covariance_at(const Eigen::VectorXd& p) const {
    const Eigen::VectorXd sigma = sigma_matrix_ * p.tail(field_.sigma_count());
    return {scale_correlation(correlation_, sigma), field_.grid};
  }

  KLBasis aligned_basis(const Eigen::VectorXd& p) const {
    KLBasis basis(covariance_at(p), mean_at(p), Truncation{1.0, modes_});
    basis.apply_signs(alignment_signs(reference_modes_, basis.modes()));
    return basis;
  }

  SAAEstimate run(const Eigen::VectorXd& p, bool with_gradient) const {
    check_parameters(p);
    const Eigen::Index ns = samples();
    const Eigen::Index np = parameter_count();
    const Eigen::Index nm = field_.mean_count();
    const Eigen::Index nsig = field_.sigma_count();
    const auto ng = static_cast<Eigen::Index>(field_.grid.size());

    double extra_value = 0.0;
    Eigen::VectorXd extra_gradient = Eigen::VectorXd::Zero(np);
    if (extra_) extra_value = extra_.eval(p, with_gradient ? &extra_gradient : nullptr, nullptr);

    const Eigen::VectorXd mean = mean_at(p);
    const Eigen::VectorXd sigma = sigma_matrix_ * p.tail(nsig);

    // Eigen method: expansion at p and one path-direction matrix per sigma coefficient.
    std::optional<KLBasis> basis;
    Eigen::MatrixXd sm;
    std::vector<Eigen::MatrixXd> directions;
    if (options_.method == SensitivityMethod::eigen) {
      basis.emplace(aligned_basis(p));
      sm = scaled_modes(*basis);
      if (with_gradient) {
        const CovarianceModel model = model_at(p);
        const CovarianceMatrix cov = covariance_at(p);
        directions.reserve(static_cast<std::size_t>(nsig));
        for (Eigen::Index k = 0; k < nsig; ++k) {
          const Eigen::MatrixXd dc = covariance_param_derivative(model, field_.grid, static_cast<std::size_t>(k) + 1);
          directions.push_back(path_direction_matrix(*basis, eigen_derivatives(cov, *basis, dc)));
        }
      }
    }

    SAAEstimate est;
    est.per_sample_values.resize(ns);
    if (with_gradient) est.per_sample_gradients.resize(ns, np);

    parallel_for(static_cast<std::size_t>(ns), options_.threads, [&](std::size_t idx) {
      const auto s = static_cast<Eigen::Index>(idx);
      Eigen::VectorXd path(ng);
      if (options_.method == SensitivityMethod::scaled) {
        path = mean + sigma.cwiseProduct(unit_paths_.row(s).transpose());
      } else {
        sample_path(mean, sm, draws_.draws.row(s), path);
      }
      double f = 0.0;
      Eigen::VectorXd de(ng);
      try {
        f = functional_.value(std::span<const double>(path.data(), static_cast<std::size_t>(ng)));
        if (with_gradient) {
          functional_.gradient(std::span<const double>(path.data(), static_cast<std::size_t>(ng)),
                               std::span<double>(de.data(), static_cast<std::size_t>(ng)));
        }
      } catch (const std::exception& e) {
        throw SampleEvaluationError(idx, e.what());
      }
      if (!std::isfinite(f) || (with_gradient && !de.allFinite())) {
        throw SampleEvaluationError(idx, "functional returned a non-finite result");
      }
      est.per_sample_values(s) = f + extra_value;
      if (!with_gradient) return;
      auto g = est.per_sample_gradients.row(s);
      if (nm > 0) g.head(nm) = (mean_matrix_.transpose() * de).transpose();
      if (options_.method == SensitivityMethod::scaled) {
        g.tail(nsig) = (sigma_matrix_.transpose() * de.cwiseProduct(unit_paths_.row(s).transpose())).transpose();
      } else {
        const Eigen::VectorXd xi = draws_.draws.row(s).transpose();
        for (Eigen::Index k = 0; k < nsig; ++k) g(nm + k) = de.dot(directions[static_cast<std::size_t>(k)] * xi);
      }
      g += extra_gradient.transpose();
    });

    est.value = ordered_mean(std::span<const double>(est.per_sample_values.data(), static_cast<std::size_t>(ns)));
    if (with_gradient) {
      est.gradient.resize(np);
      std::vector<double> column(static_cast<std::size_t>(ns));
      for (Eigen::Index k = 0; k < np; ++k) {
        for (Eigen::Index s = 0; s < ns; ++s) column[static_cast<std::size_t>(s)] = est.per_sample_gradients(s, k);
        est.gradient(k) = pathwise_gradient(column);
      }
    }
    return est;
  }

  Eigen::MatrixXd closed_form_hessian(const Eigen::VectorXd& p) const {
    check_parameters(p);
    const Eigen::Index np = parameter_count();
    const Eigen::Index nm = field_.mean_count();
    const auto ng = static_cast<Eigen::Index>(field_.grid.size());
    const Eigen::VectorXd mean = mean_at(p);
    const Eigen::VectorXd sigma = sigma_matrix_ * p.tail(field_.sigma_count());
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(np, np);
    Eigen::MatrixXd jac(ng, np);
    if (nm > 0) jac.leftCols(nm) = mean_matrix_;
    Eigen::VectorXd path(ng);
    Eigen::VectorXd h(ng);
    for (Eigen::Index s = 0; s < samples(); ++s) {
      const Eigen::VectorXd unit = unit_paths_.row(s).transpose();
      path = mean + sigma.cwiseProduct(unit);
      functional_.hessian_diagonal(std::span<const double>(path.data(), static_cast<std::size_t>(ng)),
                                   std::span<double>(h.data(), static_cast<std::size_t>(ng)));
      jac.rightCols(field_.sigma_count()) = unit.asDiagonal() * sigma_matrix_;
      sum.noalias() += jac.transpose() * h.asDiagonal() * jac;
    }
    Eigen::MatrixXd out = sum / static_cast<double>(samples());
    if (extra_) {
      Eigen::MatrixXd extra_hessian = Eigen::MatrixXd::Zero(np, np);
      extra_.eval(p, nullptr, &extra_hessian);
      out += extra_hessian;
    }
    return 0.5 * (out + out.transpose());
  }

  FieldParameterization field_;
  PathFunctional functional_;
  DeterministicTerm extra_;
  SAAOptions options_;
  Eigen::MatrixXd sigma_matrix_;
  Eigen::MatrixXd mean_matrix_;
  Eigen::MatrixXd correlation_;
  RealizationSet draws_;
  Eigen::MatrixXd unit_paths_;
  Eigen::MatrixXd reference_modes_;
  Eigen::Index modes_ = 0;
  double scatter_ = 0.0;
};

/// Asymptotic inference for an SAA optimum.
struct InferenceReport {
  Eigen::VectorXd solution;
  Eigen::MatrixXd hessian_estimate;    ///< B-hat
  Eigen::MatrixXd gradient_covariance; ///< Sigma-hat
  Eigen::MatrixXd solution_covariance; ///< B^-1 Sigma B^-1 / N
  Eigen::VectorXd std_err;             ///< epsilon_N per parameter
  double value = 0.0;
  double objective_variance = 0.0;     ///< gamma-hat^2, sample variance of F_n
  double confidence_level = 0.95;
  double z = 0.0;

  Eigen::VectorXd ci_low() const { return solution - z * std_err; }
  Eigen::VectorXd ci_high() const { return solution + z * std_err; }
};

inline double normal_critical_value(double confidence_level) {
  if (!(confidence_level > 0.0 && confidence_level < 1.0)) throw InvalidArgument("confidence level must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * confidence_level);
}

/**
 * B-hat = mean per-sample Hessian (supplied), Sigma-hat = (1/N) sum grad F_n grad F_n^T,
 * epsilon_N = sqrt(diag(B^-1 Sigma B^-1) / N).
 */
inline InferenceReport inference(const SAAEstimate& estimate, const Eigen::VectorXd& solution,
                                 const Eigen::MatrixXd& hessian_estimate, double confidence_level = 0.95) {
  const Eigen::Index ns = estimate.per_sample_gradients.rows();
  const Eigen::Index np = estimate.per_sample_gradients.cols();
  if (ns < 1) throw InvalidArgument("inference needs per-sample gradients");
  if (hessian_estimate.rows() != np || hessian_estimate.cols() != np || solution.size() != np) {
    throw InvalidArgument("inference: dimension mismatch");
  }
  InferenceReport r;
  r.solution = solution;
  r.value = estimate.value;
  r.confidence_level = confidence_level;
  r.z = normal_critical_value(confidence_level);
  r.hessian_estimate = hessian_estimate;
  r.gradient_covariance = estimate.per_sample_gradients.transpose() * estimate.per_sample_gradients / static_cast<double>(ns);
  r.gradient_covariance = 0.5 * (r.gradient_covariance + r.gradient_covariance.transpose());

  const Eigen::VectorXd centered = estimate.per_sample_values.array() - estimate.value;
  r.objective_variance = ns > 1 ? centered.squaredNorm() / static_cast<double>(ns - 1) : 0.0;

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(hessian_estimate);
  const auto& sv = svd.singularValues();
  if (np > 0 && (!(sv(0) > 0.0) || sv(np - 1) <= 1e-12 * sv(0))) {
    throw InferenceError("estimated Hessian is singular; the optimum is not locally identified");
  }
  const Eigen::MatrixXd binv = hessian_estimate.fullPivLu().inverse();
  r.solution_covariance = binv * r.gradient_covariance * binv.transpose() / static_cast<double>(ns);
  r.solution_covariance = 0.5 * (r.solution_covariance + r.solution_covariance.transpose());
  r.std_err = r.solution_covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return r;
}

/// Standard deviation with the n-1 denominator.
inline double sample_std(std::span<const double> values) {
  if (values.size() < 2) throw InvalidArgument("standard deviation needs two values");
  const double mean = ordered_mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

/// Sample skewness g1 = m3 / m2^{3/2}.
inline double sample_skewness(std::span<const double> values) {
  if (values.size() < 3) throw InvalidArgument("skewness needs three values");
  const double mean = ordered_mean(values);
  double m2 = 0.0;
  double m3 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(values.size());
  m3 /= static_cast<double>(values.size());
  return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

/**
 * Least-squares slope of log(std of replicated errors) against log N.
 * A slope near -1/2 is the SAA convergence rate.
 */
inline double optimality_asymptotics_check(const std::vector<std::vector<double>>& replicated_errors,
                                           const std::vector<double>& sample_sizes) {
  if (replicated_errors.size() != sample_sizes.size()) throw InvalidArgument("one replication set per sample size");
  if (sample_sizes.size() < 2) throw InvalidArgument("need at least two sample sizes");
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (replicated_errors[i].size() < 30) {
      throw InvalidArgument("need at least 30 replications per sample size, got " +
                            std::to_string(replicated_errors[i].size()));
    }
    if (!(sample_sizes[i] > 0.0)) throw InvalidArgument("sample sizes must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      if (sample_sizes[j] == sample_sizes[i]) throw InvalidArgument("sample sizes must be distinct");
    }
    lx.push_back(std::log(sample_sizes[i]));
    ly.push_back(std::log(sample_std(replicated_errors[i])));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

} // namespace grfopt

#endif // GRFOPT_SAA_HPP
