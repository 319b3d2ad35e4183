#ifndef GRFOPT_APP_COMMANDS_HPP
#define GRFOPT_APP_COMMANDS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "grfopt/app/config.hpp"
#include "grfopt/errors.hpp"
#include "grfopt/kl.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/parallel.hpp"
#include "grfopt/problems.hpp"
#include "grfopt/randomfield.hpp"
#include "grfopt/saa.hpp"
#include "grfopt/sqp.hpp"

namespace grfopt::app {

enum ExitCode : int { ok = 0, validation_error = 1, numerical_failure = 2, not_converged = 3 };

/// The optimizer stopped without meeting its convergence test.
class NonConvergence : public Error {
public:
  using Error::Error;
};

/// A converge-study replication failed; carries the exit code of the underlying failure.
class ReplicationFailure : public Error {
public:
  ReplicationFailure(std::uint64_t seed, const std::string& what, int code)
      : Error("replication with seed " + std::to_string(seed) + " failed: " + what), seed_(seed), code_(code) {}
  std::uint64_t seed() const { return seed_; }
  int code() const { return code_; }

private:
  std::uint64_t seed_;
  int code_;
};

inline int exit_code_for(const std::exception& e) {
  if (const auto* r = dynamic_cast<const ReplicationFailure*>(&e)) return r->code();
  if (dynamic_cast<const NonConvergence*>(&e)) return not_converged;
  if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return validation_error;
  }
  return numerical_failure;
}

inline std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

inline std::string header_line(std::uint64_t hash, std::uint64_t seed) {
  return fmt::format("# config_hash={:016x} seed={}\n", hash, seed);
}

/// Output file opened before any computation so unwritable targets fail early.
class OutputFile {
public:
  OutputFile(const std::filesystem::path& path, std::uint64_t hash, std::uint64_t seed, bool json = false)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
    if (!json) out_ << header_line(hash, seed);
  }

  void line(const std::string& text) { out_ << text << '\n'; }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing " + path_.string());
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline std::filesystem::path prepare_output(const RunConfig& c) {
  const std::filesystem::path dir(c.output);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

inline nlohmann::ordered_json json_header(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["config_hash"] = fmt::format("{:016x}", config_hash(c));
  j["seed"] = c.seed;
  return j;
}

inline void write_json(OutputFile& file, const nlohmann::ordered_json& j) {
  file.line(j.dump(2));
  file.close();
}

inline nlohmann::ordered_json to_json(const Eigen::VectorXd& v) {
  auto out = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Realizations of the configured kernel on a uniform grid, plus the eigenvalue spectrum.
inline int cmd_sample(const RunConfig& c) {
  validate(c);
  const auto dir = prepare_output(c);
  const std::uint64_t hash = config_hash(c);
  OutputFile paths_file(dir / "realizations.csv", hash, c.seed);
  OutputFile spectrum_file(dir / "spectrum.csv", hash, c.seed);

  const Grid1D grid = Grid1D::uniform(c.grid_points);
  const KernelKind kind = kernel_kind_from_string(c.kernel);
  const CovarianceModel model =
      kind == KernelKind::squared_exponential ? CovarianceModel::squared_exponential(c.correlation_length)
      : kind == KernelKind::exponential
          ? CovarianceModel::exponential(c.correlation_length)
          : CovarianceModel::scaled(c.correlation_length, SplineField::constant(c.sigma_basis, c.sample_sigma));
  const CovarianceMatrix cov = assemble_covariance(model, grid);
  Truncation truncation{c.sample_threshold, {}};
  if (c.modes) truncation.modes = static_cast<Eigen::Index>(*c.modes);
  const KLBasis basis(cov, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size())), truncation);
  const RealizationSet draws = draw_realizations(c.seed, static_cast<Eigen::Index>(c.paths), basis.truncation_level());
  const Eigen::MatrixXd paths = sample_paths(basis, draws);

  std::vector<std::string> head{"x"};
  for (std::size_t k = 1; k <= c.paths; ++k) head.push_back(fmt::format("path_{}", k));
  paths_file.row(head);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    std::vector<std::string> cells{fmt_double(grid.points()[j])};
    for (Eigen::Index n = 0; n < paths.rows(); ++n) cells.push_back(fmt_double(paths(n, static_cast<Eigen::Index>(j))));
    paths_file.row(cells);
  }
  paths_file.close();

  const Eigen::VectorXd& values = basis.symmetric_spectrum().values;
  spectrum_file.row({"index", "eigenvalue", "partial_scatter", "retained"});
  const double total = values.sum();
  double running = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    running += values(i);
    spectrum_file.row({std::to_string(i + 1), fmt_double(values(i)), fmt_double(running / total),
                       i < basis.truncation_level() ? "1" : "0"});
  }
  spectrum_file.close();
  return ok;
}

inline std::string parameter_name(const RunConfig& c, Eigen::Index k) {
  const auto nm = static_cast<Eigen::Index>(c.problem == ProblemKind::variance ? c.mean_basis : 0);
  return k < nm ? fmt::format("mean_{}", k) : fmt::format("sigma_{}", k - nm);
}

/// Pathwise SAA gradient against central differences of the SAA objective, per parameter.
inline int cmd_gradcheck(const RunConfig& c) {
  validate(c);
  const auto dir = prepare_output(c);
  OutputFile file(dir / "gradcheck.csv", config_hash(c), c.seed);

  SAASetup setup = build_problem(c, c.seed, c.samples, c.threads);
  Eigen::VectorXd p = setup.spec.initial;
  if (c.problem == ProblemKind::variance) p.tail(static_cast<Eigen::Index>(c.sigma_basis)).setConstant(c.gradcheck_sigma);
  Eigen::VectorXd g(p.size());
  setup.spec.objective.value_and_gradient(p, g);

  const double h = c.fd_step;
  Eigen::VectorXd fd(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    Eigen::VectorXd plus = p;
    Eigen::VectorXd minus = p;
    plus(k) += h;
    minus(k) -= h;
    fd(k) = (setup.spec.objective.value(plus) - setup.spec.objective.value(minus)) / (2.0 * h);
  }

  file.row({"parameter", "pathwise", "fd", "rel_err"});
  double worst = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double scale = std::max({std::abs(fd(k)), std::abs(g(k)), std::numeric_limits<double>::min()});
    const double rel = std::abs(g(k) - fd(k)) / scale;
    worst = std::max(worst, rel);
    file.row({parameter_name(c, k), fmt_double(g(k)), fmt_double(fd(k)), fmt_double(rel)});
  }
  file.close();
  if (worst > c.gradcheck_tolerance) {
    std::cerr << fmt::format("gradcheck: worst relative error {:.3e} exceeds {:.3e}\n", worst, c.gradcheck_tolerance);
    return numerical_failure;
  }
  return ok;
}

/// sigma-hat(x) and its pointwise confidence half-width from the coefficient covariance.
struct PointwiseBand {
  std::vector<double> x;
  std::vector<double> sigma;
  std::vector<double> half_width;
};

inline PointwiseBand pointwise_band(const SplineField& sigma, const Eigen::MatrixXd& coefficient_covariance, double z,
                                    std::size_t points) {
  PointwiseBand out;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(points - 1);
    const Eigen::VectorXd b = sigma.basis.evaluate(x);
    out.x.push_back(x);
    out.sigma.push_back(spline_eval(sigma, x));
    out.half_width.push_back(z * std::sqrt(std::max(0.0, b.dot(coefficient_covariance * b))));
  }
  return out;
}

inline void write_trace(OutputFile& file, const std::vector<IterationRecord>& history) {
  file.row({"iter", "f", "step_norm", "kkt", "backtracks"});
  for (const auto& r : history) {
    file.row({std::to_string(r.iteration), fmt_double(r.value), fmt_double(r.step_norm), fmt_double(r.kkt),
              std::to_string(r.backtracks)});
  }
}

/// One SAA optimization with asymptotic inference at the solution.
inline int cmd_optimize(const RunConfig& c) {
  validate(c);
  const auto dir = prepare_output(c);
  const std::uint64_t hash = config_hash(c);
  OutputFile optimum_file(dir / "optimum.csv", hash, c.seed);
  OutputFile trace_file(dir / "trace.csv", hash, c.seed);
  OutputFile report_file(dir / "report.json", hash, c.seed, true);

  SAASetup setup = build_problem(c, c.seed, c.samples, c.threads);
  setup.spec.kkt_tol = c.kkt_tol;
  setup.spec.step_tol = c.step_tol;
  setup.spec.max_iter = c.max_iter;
  const OptimizationResult res = minimize(setup.spec);
  if (c.trace) {
    for (const auto& r : res.history) {
      std::cerr << fmt::format("iter {:4d}  f {:.12e}  step {:.3e}  kkt {:.3e}  backtracks {}\n", r.iteration, r.value,
                               r.step_norm, r.kkt, r.backtracks);
    }
  }
  write_trace(trace_file, res.history);
  trace_file.close();

  const auto ns = static_cast<Eigen::Index>(c.sigma_basis);
  const SplineField sigma_hat(SplineBasis(c.sigma_basis), res.solution.tail(ns));
  nlohmann::ordered_json report = json_header(c);
  report["problem"] = to_string(c.problem);
  report["method"] = std::string(to_string(c.method));
  report["samples"] = c.samples;
  report["status"] = std::string(to_string(res.status));
  report["objective"] = res.value;
  report["kkt"] = res.kkt_residual;
  report["iterations"] = res.iterations;
  if (setup.saa) {
    report["modes"] = setup.saa->modes();
    report["partial_scatter"] = setup.saa->partial_scatter();
  }

  optimum_file.row({"x", "sigma_hat", "sigma_true", "ci_low", "ci_high"});
  if (c.problem == ProblemKind::variance) {
    const SAAEstimate est = setup.saa->evaluate(res.solution);
    const InferenceReport inf =
        inference(est, res.solution, setup.saa->hessian_estimate(res.solution), c.confidence_level);
    report["epsilon_N"] = to_json(inf.std_err);
    report["max_epsilon_N"] = inf.std_err.size() > 0 ? inf.std_err.tail(ns).maxCoeff() : 0.0;
    report["confidence_level"] = c.confidence_level;
    report["inference"] = {{"value", inf.value},
                           {"gradient", to_json(est.gradient)},
                           {"std_err", to_json(inf.std_err)},
                           {"ci_low", to_json(inf.ci_low())},
                           {"ci_high", to_json(inf.ci_high())}};
    const PointwiseBand band =
        pointwise_band(sigma_hat, inf.solution_covariance.bottomRightCorner(ns, ns), inf.z, c.output_grid);
    double max_error = 0.0;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < band.x.size(); ++i) {
      const double truth = analytic_optimum(sine_weight(band.x[i]));
      const double lo = band.sigma[i] - band.half_width[i];
      const double hi = band.sigma[i] + band.half_width[i];
      max_error = std::max(max_error, std::abs(band.sigma[i] - truth));
      covered += lo <= truth && truth <= hi ? 1 : 0;
      optimum_file.row({fmt_double(band.x[i]), fmt_double(band.sigma[i]), fmt_double(truth), fmt_double(lo), fmt_double(hi)});
    }
    report["max_abs_error"] = max_error;
    report["ci_coverage"] = covered;
    report["output_points"] = band.x.size();
  } else {
    const QuadratureRule rule(static_cast<int>(c.quad_intervals), static_cast<int>(c.quad_nodes));
    const ValueAndGradient v = variability_metric(sigma_hat, rule);
    const double budget = setup.spec.equality_rhs(0);
    report["variability"] = v.value;
    report["budget"] = budget;
    report["feasibility_residual"] = std::abs(v.value - budget);
    report["baseline_objective"] = setup.spec.objective.value(setup.spec.initial);
    report["sigma_max"] = c.sigma_max;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < c.output_grid; ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(c.output_grid - 1);
      optimum_file.row({fmt_double(x), fmt_double(spline_eval(sigma_hat, x)), fmt_double(nan), fmt_double(nan), fmt_double(nan)});
    }
  }
  report["solution"] = to_json(res.solution);
  optimum_file.close();
  write_json(report_file, report);
  if (res.status != OptimizationStatus::converged) {
    std::cerr << "optimize: solver stopped with status " << to_string(res.status) << "\n";
    return not_converged;
  }
  return ok;
}

/// Error of sigma-hat at x = 0.5 for one replication of the variance problem.
inline double replication_error(const RunConfig& c, std::uint64_t seed, long samples,
                                std::vector<IterationRecord>* history = nullptr) {
  SAASetup setup = build_problem(c, seed, samples, 1);
  setup.spec.kkt_tol = c.kkt_tol;
  setup.spec.step_tol = c.step_tol;
  setup.spec.max_iter = c.max_iter;
  const OptimizationResult res = minimize(setup.spec);
  if (history) *history = res.history;
  if (res.status != OptimizationStatus::converged) {
    throw NonConvergence("solver stopped with status " + std::string(to_string(res.status)));
  }
  const auto ns = static_cast<Eigen::Index>(c.sigma_basis);
  const SplineField sigma(SplineBasis(c.sigma_basis), res.solution.tail(ns));
  return spline_eval(sigma, 0.5) - analytic_optimum(sine_weight(0.5));
}

/// M replications per sample size; histograms of the mid-domain error and the fitted log-log slope.
inline int cmd_converge(const RunConfig& c) {
  validate(c);
  if (c.problem != ProblemKind::variance) throw InvalidArgument("converge runs only the variance problem");
  const auto dir = prepare_output(c);
  const std::uint64_t hash = config_hash(c);
  std::vector<OutputFile> hist_files;
  std::vector<OutputFile> trace_files;
  hist_files.reserve(c.sample_sizes.size());
  for (long n : c.sample_sizes) {
    hist_files.emplace_back(dir / fmt::format("hist_{}.csv", n), hash, c.seed);
    if (c.trace) trace_files.emplace_back(dir / fmt::format("trace_{}.csv", n), hash, c.seed);
  }
  OutputFile slopes_file(dir / "slopes.json", hash, c.seed, true);

  std::vector<std::vector<double>> errors;
  std::vector<double> sizes;
  nlohmann::ordered_json per_n = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < c.sample_sizes.size(); ++s) {
    const long n = c.sample_sizes[s];
    std::vector<double> err(c.replications);
    std::vector<std::vector<IterationRecord>> histories(c.replications);
    parallel_for(c.replications, c.threads, [&](std::size_t m) {
      const std::uint64_t seed = c.seed + m;
      try {
        err[m] = replication_error(c, seed, n, c.trace ? &histories[m] : nullptr);
      } catch (const std::exception& e) {
        throw ReplicationFailure(seed, e.what(), exit_code_for(e));
      }
    });
    auto& hist = hist_files[s];
    hist.row({"replication", "seed", "error"});
    for (std::size_t m = 0; m < err.size(); ++m) {
      hist.row({std::to_string(m), std::to_string(c.seed + m), fmt_double(err[m])});
    }
    hist.close();
    if (c.trace) {
      auto& tf = trace_files[s];
      tf.row({"replication", "iter", "f", "step_norm", "kkt", "backtracks"});
      for (std::size_t m = 0; m < histories.size(); ++m) {
        for (const auto& r : histories[m]) {
          tf.row({std::to_string(m), std::to_string(r.iteration), fmt_double(r.value), fmt_double(r.step_norm),
                  fmt_double(r.kkt), std::to_string(r.backtracks)});
        }
      }
      tf.close();
    }
    per_n.push_back({{"N", n},
                     {"mean", ordered_mean(err)},
                     {"std", sample_std(err)},
                     {"skewness", sample_skewness(err)}});
    errors.push_back(std::move(err));
    sizes.push_back(static_cast<double>(n));
  }
  nlohmann::ordered_json j = json_header(c);
  j["replications"] = c.replications;
  j["sample_sizes"] = c.sample_sizes;
  j["statistics"] = per_n;
  j["slope"] = optimality_asymptotics_check(errors, sizes);
  write_json(slopes_file, j);
  return ok;
}

} // namespace grfopt::app

#endif // GRFOPT_APP_COMMANDS_HPP
