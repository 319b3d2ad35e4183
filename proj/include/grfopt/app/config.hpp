#ifndef GRFOPT_APP_CONFIG_HPP
#define GRFOPT_APP_CONFIG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grfopt/errors.hpp"
#include "grfopt/problems.hpp"
#include "grfopt/randomfield.hpp"
#include "grfopt/sensitivity.hpp"

namespace grfopt::app {

enum class ProblemKind { variance, tolerance };

/// Every knob of a CLI run. Defaults here are the documented defaults.
struct RunConfig {
  ProblemKind problem = ProblemKind::variance;
  std::uint64_t seed = 1;
  long samples = 10000;
  SensitivityMethod method = SensitivityMethod::scaled;
  std::size_t threads = 1;
  std::string output = "out";
  double confidence_level = 0.95;
  std::size_t output_grid = 101;

  // field
  double correlation_length = 0.1;
  std::size_t sigma_basis = 20;
  std::size_t mean_basis = 0;
  double scatter_threshold = 0.9999; ///< optimization problems

  // quadrature rule that doubles as the Nystrom grid
  std::size_t quad_intervals = 20;
  std::size_t quad_nodes = 2;

  // variance problem
  double sigma_min = 0.2;
  double sigma_init = 1.0;

  // tolerance problem
  std::string tolerance_weight = "leading-edge";
  double sigma_base = 1.0;
  double budget_fraction = 0.98;
  double sigma_max = 1.0;
  double sigma_min_fraction = 0.1;
  std::string expectation = "sampled";

  // solver
  double kkt_tol = 1e-6;
  double step_tol = 1e-10;
  int max_iter = 200;

  // sample
  std::string kernel = "squared-exponential";
  std::size_t grid_points = 201;
  std::size_t paths = 5;
  std::optional<long> modes;
  double sample_sigma = 1.0;
  double sample_threshold = 0.99;

  // gradcheck
  double fd_step = 1e-5;
  double gradcheck_sigma = 1.0;
  double gradcheck_tolerance = 1e-4;

  // converge
  std::size_t replications = 200;
  std::vector<long> sample_sizes{100, 400};

  bool trace = false;
};

inline std::string to_string(ProblemKind p) { return p == ProblemKind::variance ? "variance" : "tolerance"; }

/// JSON form of a config; the canonical text that gets hashed.
inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["problem"] = to_string(c.problem);
  j["seed"] = c.seed;
  j["samples"] = c.samples;
  j["method"] = std::string(to_string(c.method));
  j["threads"] = c.threads;
  j["output"] = c.output;
  j["confidence_level"] = c.confidence_level;
  j["output_grid"] = c.output_grid;
  j["field"] = {{"correlation_length", c.correlation_length},
                {"sigma_basis", c.sigma_basis},
                {"mean_basis", c.mean_basis},
                {"scatter_threshold", c.scatter_threshold}};
  j["quadrature"] = {{"intervals", c.quad_intervals}, {"nodes", c.quad_nodes}};
  j["variance"] = {{"sigma_min", c.sigma_min}, {"sigma_init", c.sigma_init}};
  j["tolerance"] = {{"weight", c.tolerance_weight},         {"sigma_base", c.sigma_base},
                    {"budget_fraction", c.budget_fraction}, {"sigma_max", c.sigma_max},
                    {"sigma_min_fraction", c.sigma_min_fraction}, {"expectation", c.expectation}};
  j["solver"] = {{"kkt_tol", c.kkt_tol}, {"step_tol", c.step_tol}, {"max_iter", c.max_iter}};
  nlohmann::ordered_json sample = {{"kernel", c.kernel},
                                   {"grid_points", c.grid_points},
                                   {"paths", c.paths},
                                   {"sigma", c.sample_sigma},
                                   {"scatter_threshold", c.sample_threshold}};
  sample["modes"] = c.modes ? nlohmann::ordered_json(*c.modes) : nlohmann::ordered_json(nullptr);
  j["sample"] = sample;
  j["gradcheck"] = {{"step", c.fd_step}, {"sigma", c.gradcheck_sigma}, {"tolerance", c.gradcheck_tolerance}};
  j["converge"] = {{"replications", c.replications}, {"sample_sizes", c.sample_sizes}};
  return j;
}

namespace detail {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument("config field " + where + key + " has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument("config section '" + where + "' must be an object");
  for (const auto& [name, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || name == k;
    if (!known) throw InvalidArgument("unknown config field " + where + name);
  }
}

} // namespace detail

/// Reads a JSON config over the defaults. Unknown fields are rejected.
inline RunConfig parse_config(const nlohmann::json& j, RunConfig c = {}) {
  using detail::read;
  detail::reject_unknown(j,
                         {"problem", "seed", "samples", "method", "threads", "output", "confidence_level", "output_grid",
                          "field", "quadrature", "variance", "tolerance", "solver", "sample", "gradcheck", "converge"},
                         "");
  std::string problem = to_string(c.problem);
  read(j, "problem", problem, "");
  if (problem == "variance") c.problem = ProblemKind::variance;
  else if (problem == "tolerance") c.problem = ProblemKind::tolerance;
  else throw InvalidArgument("unknown problem '" + problem + "' (expected variance or tolerance)");
  read(j, "seed", c.seed, "");
  read(j, "samples", c.samples, "");
  std::string method(to_string(c.method));
  read(j, "method", method, "");
  c.method = sensitivity_method_from_string(method);
  read(j, "threads", c.threads, "");
  read(j, "output", c.output, "");
  read(j, "confidence_level", c.confidence_level, "");
  read(j, "output_grid", c.output_grid, "");
  if (j.contains("field")) {
    const auto& f = j["field"];
    detail::reject_unknown(f, {"correlation_length", "sigma_basis", "mean_basis", "scatter_threshold"}, "field.");
    read(f, "correlation_length", c.correlation_length, "field.");
    read(f, "sigma_basis", c.sigma_basis, "field.");
    read(f, "mean_basis", c.mean_basis, "field.");
    read(f, "scatter_threshold", c.scatter_threshold, "field.");
  }
  if (j.contains("quadrature")) {
    const auto& q = j["quadrature"];
    detail::reject_unknown(q, {"intervals", "nodes"}, "quadrature.");
    read(q, "intervals", c.quad_intervals, "quadrature.");
    read(q, "nodes", c.quad_nodes, "quadrature.");
  }
  if (j.contains("variance")) {
    const auto& v = j["variance"];
    detail::reject_unknown(v, {"sigma_min", "sigma_init"}, "variance.");
    read(v, "sigma_min", c.sigma_min, "variance.");
    read(v, "sigma_init", c.sigma_init, "variance.");
  }
  if (j.contains("tolerance")) {
    const auto& t = j["tolerance"];
    detail::reject_unknown(t, {"weight", "sigma_base", "budget_fraction", "sigma_max", "sigma_min_fraction", "expectation"},
                           "tolerance.");
    read(t, "weight", c.tolerance_weight, "tolerance.");
    read(t, "sigma_base", c.sigma_base, "tolerance.");
    read(t, "budget_fraction", c.budget_fraction, "tolerance.");
    read(t, "sigma_max", c.sigma_max, "tolerance.");
    read(t, "sigma_min_fraction", c.sigma_min_fraction, "tolerance.");
    read(t, "expectation", c.expectation, "tolerance.");
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::reject_unknown(s, {"kkt_tol", "step_tol", "max_iter"}, "solver.");
    read(s, "kkt_tol", c.kkt_tol, "solver.");
    read(s, "step_tol", c.step_tol, "solver.");
    read(s, "max_iter", c.max_iter, "solver.");
  }
  if (j.contains("sample")) {
    const auto& s = j["sample"];
    detail::reject_unknown(s, {"kernel", "grid_points", "paths", "modes", "sigma", "scatter_threshold"}, "sample.");
    read(s, "kernel", c.kernel, "sample.");
    read(s, "grid_points", c.grid_points, "sample.");
    read(s, "paths", c.paths, "sample.");
    read(s, "sigma", c.sample_sigma, "sample.");
    read(s, "scatter_threshold", c.sample_threshold, "sample.");
    if (s.contains("modes") && !s["modes"].is_null()) {
      long m = 0;
      read(s, "modes", m, "sample.");
      c.modes = m;
    }
  }
  if (j.contains("gradcheck")) {
    const auto& g = j["gradcheck"];
    detail::reject_unknown(g, {"step", "sigma", "tolerance"}, "gradcheck.");
    read(g, "step", c.fd_step, "gradcheck.");
    read(g, "sigma", c.gradcheck_sigma, "gradcheck.");
    read(g, "tolerance", c.gradcheck_tolerance, "gradcheck.");
  }
  if (j.contains("converge")) {
    const auto& v = j["converge"];
    detail::reject_unknown(v, {"replications", "sample_sizes"}, "converge.");
    read(v, "replications", c.replications, "converge.");
    read(v, "sample_sizes", c.sample_sizes, "converge.");
  }
  return c;
}

inline RunConfig load_config(const std::string& path, RunConfig defaults = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j, std::move(defaults));
}

/// Checks every field used by any subcommand before computation starts.
inline void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
  };
  require(c.samples >= 1, "samples must be at least 1");
  require(c.threads >= 1, "threads must be at least 1");
  require(c.confidence_level > 0.0 && c.confidence_level < 1.0, "confidence_level must lie in (0,1)");
  require(c.output_grid >= 2, "output_grid needs at least 2 points");
  require(std::isfinite(c.correlation_length) && c.correlation_length > 0.0, "field.correlation_length must be positive");
  require(c.sigma_basis >= 4, "field.sigma_basis must be at least 4");
  require(c.mean_basis == 0 || c.mean_basis >= 4, "field.mean_basis must be 0 or at least 4");
  require(c.scatter_threshold > 0.0 && c.scatter_threshold <= 1.0, "field.scatter_threshold must lie in (0,1]");
  require(c.quad_intervals >= 1 && c.quad_nodes >= 1, "quadrature needs at least one interval and one node");
  require(c.sigma_min > 0.0, "variance.sigma_min must be positive");
  require(c.sigma_init >= c.sigma_min, "variance.sigma_init must be at least sigma_min");
  require(c.tolerance_weight == "leading-edge" || c.tolerance_weight == "constant",
          "tolerance.weight must be leading-edge or constant");
  require(c.expectation == "sampled" || c.expectation == "exact", "tolerance.expectation must be sampled or exact");
  require(c.sigma_base > 0.0 && c.sigma_max > 0.0, "tolerance sigma values must be positive");
  require(c.budget_fraction > 0.0 && c.budget_fraction <= 1.0, "tolerance.budget_fraction must lie in (0,1]");
  require(c.sigma_min_fraction > 0.0, "tolerance.sigma_min_fraction must be positive");
  require(c.problem != ProblemKind::tolerance || c.method == SensitivityMethod::scaled,
          "the tolerance problem supports only the scaled method");
  require(c.kkt_tol > 0.0 && c.step_tol > 0.0 && c.max_iter >= 1, "solver tolerances must be positive");
  kernel_kind_from_string(c.kernel);
  require(c.grid_points >= 2, "sample.grid_points must be at least 2");
  require(c.paths >= 1, "sample.paths must be at least 1");
  require(!c.modes || *c.modes >= 1, "sample.modes must be at least 1");
  require(c.sample_sigma > 0.0, "sample.sigma must be positive");
  require(c.sample_threshold > 0.0 && c.sample_threshold <= 1.0, "sample.scatter_threshold must lie in (0,1]");
  require(c.fd_step > 0.0, "gradcheck.step must be positive");
  require(c.gradcheck_sigma > 0.0, "gradcheck.sigma must be positive");
  require(c.gradcheck_tolerance > 0.0, "gradcheck.tolerance must be positive");
  require(c.replications >= 30, "converge.replications must be at least 30");
  require(c.sample_sizes.size() >= 2, "converge.sample_sizes needs at least two values");
  for (std::size_t i = 0; i < c.sample_sizes.size(); ++i) {
    require(c.sample_sizes[i] >= 1, "converge.sample_sizes must be positive");
    for (std::size_t k = 0; k < i; ++k) require(c.sample_sizes[k] != c.sample_sizes[i], "converge.sample_sizes must be distinct");
  }
}

/// FNV-1a of the canonical JSON, leaving out fields that do not change results.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::ordered_json j = to_json(c);
  j.erase("threads");
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline WeightFunction tolerance_weight(const RunConfig& c) {
  if (c.tolerance_weight == "constant") return [](double) { return 1.0; };
  return leading_edge_weight;
}

inline VarianceProblem variance_problem(const RunConfig& c) {
  VarianceProblem p;
  p.rule = QuadratureRule(static_cast<int>(c.quad_intervals), static_cast<int>(c.quad_nodes));
  p.sigma_basis_size = c.sigma_basis;
  p.mean_basis_size = c.mean_basis;
  p.correlation_length = c.correlation_length;
  p.sigma_min = c.sigma_min;
  p.sigma_init = c.sigma_init;
  p.scatter_threshold = c.scatter_threshold;
  return p;
}

inline ToleranceProblem tolerance_problem(const RunConfig& c) {
  ToleranceProblem p;
  p.weight = tolerance_weight(c);
  p.rule = QuadratureRule(static_cast<int>(c.quad_intervals), static_cast<int>(c.quad_nodes));
  p.sigma_basis_size = c.sigma_basis;
  p.correlation_length = c.correlation_length;
  p.sigma_base = c.sigma_base;
  p.budget_fraction = c.budget_fraction;
  p.sigma_max = c.sigma_max;
  p.sigma_min_fraction = c.sigma_min_fraction;
  p.scatter_threshold = c.scatter_threshold;
  p.expectation = c.expectation == "exact" ? ExpectationMode::exact : ExpectationMode::sampled;
  return p;
}

/// Builds the configured problem with the given seed and sample count.
inline SAASetup build_problem(const RunConfig& c, std::uint64_t seed, long samples, std::size_t threads) {
  if (c.problem == ProblemKind::variance) return build_variance_saa(variance_problem(c), seed, samples, c.method, threads);
  return build_tolerance_saa(tolerance_problem(c), seed, samples, threads);
}

} // namespace grfopt::app

#endif // GRFOPT_APP_CONFIG_HPP
