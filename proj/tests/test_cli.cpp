#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "grfopt/app/commands.hpp"

using namespace grfopt;
using namespace grfopt::app;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("grfopt_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(GRFOPT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Pooled correlation between grid points a lag apart, across all paths.
double lag_correlation(const std::vector<std::vector<std::string>>& rows, std::size_t lag) {
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 1; i + lag < rows.size(); ++i) {
    for (std::size_t k = 1; k < rows[i].size(); ++k) {
      const double a = std::stod(rows[i][k]);
      const double b = std::stod(rows[i + lag][k]);
      sxy += a * b;
      sxx += a * a;
      syy += b * b;
    }
  }
  return sxy / std::sqrt(sxx * syy);
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.output = out.string();
  c.samples = 200;
  return c;
}

} // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  const RunConfig c;
  EXPECT_NO_THROW(validate(c));
  const RunConfig back = parse_config(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Config, PartialOverride) {
  const RunConfig c = parse_config(nlohmann::json::parse(R"({"samples": 50, "field": {"sigma_basis": 8}})"));
  EXPECT_EQ(c.samples, 50);
  EXPECT_EQ(c.sigma_basis, 8u);
  EXPECT_EQ(c.correlation_length, 0.1);
}

TEST(Config, SampleConfigsLoad) {
  for (const char* name : {"variance.json", "tolerance.json", "converge.json", "sample.json", "gradcheck.json"}) {
    const RunConfig c = load_config(std::string(GRFOPT_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(validate(c)) << name;
  }
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"sampels": 5})")), InvalidArgument);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"field": {"L": 5}})")), InvalidArgument);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"samples": "many"})")), InvalidArgument);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"method": "adjoint"})")), InvalidArgument);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"problem": "other"})")), InvalidArgument);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
  const fs::path dir = scratch("badjson");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config((dir / "bad.json").string()), InvalidArgument);
}

TEST(Config, ValidationCatchesEachField) {
  auto fails = [](auto mutate) {
    RunConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), InvalidArgument);
  };
  fails([](RunConfig& c) { c.samples = 0; });
  fails([](RunConfig& c) { c.threads = 0; });
  fails([](RunConfig& c) { c.confidence_level = 1.0; });
  fails([](RunConfig& c) { c.correlation_length = -0.1; });
  fails([](RunConfig& c) { c.sigma_basis = 3; });
  fails([](RunConfig& c) { c.sigma_init = 0.1; });
  fails([](RunConfig& c) { c.modes = 0; });
  fails([](RunConfig& c) { c.kernel = "matern"; });
  fails([](RunConfig& c) { c.replications = 29; });
  fails([](RunConfig& c) { c.sample_sizes = {100, 100}; });
  fails([](RunConfig& c) { c.sample_sizes = {100}; });
  fails([](RunConfig& c) {
    c.problem = ProblemKind::tolerance;
    c.method = SensitivityMethod::eigen;
  });
}

TEST(Config, HashIgnoresThreadsAndOutput) {
  RunConfig a;
  RunConfig b;
  b.threads = 8;
  b.output = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  RunConfig d;
  d.kkt_tol = 1e-7;
  EXPECT_NE(config_hash(a), config_hash(d));
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(InvalidArgument("x")), validation_error);
  EXPECT_EQ(exit_code_for(IoError("x")), validation_error);
  EXPECT_EQ(exit_code_for(DegenerateCovarianceError("x")), numerical_failure);
  EXPECT_EQ(exit_code_for(NonConvergence("x")), not_converged);
  EXPECT_EQ(exit_code_for(ReplicationFailure(4, "x", not_converged)), not_converged);
}

TEST(Output, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 2.0e-300, -123456.789}) EXPECT_EQ(std::stod(fmt_double(v)), v);
  EXPECT_EQ(header_line(0xabcULL, 9), "# config_hash=0000000000000abc seed=9\n");
}

TEST(Output, UnwritableDirectoryIsIoError) {
  const fs::path dir = scratch("unwritable");
  std::ofstream(dir / "file") << "x";
  RunConfig c;
  c.output = (dir / "file" / "sub").string();
  EXPECT_THROW(cmd_sample(c), IoError);
}

TEST(Sample, WritesHeaderedFiles) {
  const fs::path dir = scratch("sample");
  RunConfig c;
  c.output = dir.string();
  ASSERT_EQ(cmd_sample(c), ok);
  const std::string text = slurp(dir / "realizations.csv");
  EXPECT_EQ(text.rfind(header_line(config_hash(c), c.seed), 0), 0u);
  const auto rows = read_csv(dir / "realizations.csv");
  ASSERT_EQ(rows.size(), 202u);
  EXPECT_EQ(rows[0].size(), 6u);
  const auto spectrum = read_csv(dir / "spectrum.csv");
  ASSERT_EQ(spectrum.size(), 202u);
  EXPECT_EQ(spectrum[1][3], "1");
  EXPECT_NEAR(std::stod(spectrum.back()[2]), 1.0, 1e-12);
}

TEST(Sample, LongerCorrelationLengthRaisesLagCorrelation) {
  double corr[2];
  int i = 0;
  for (double l : {0.5, 0.05}) {
    const fs::path dir = scratch("lag" + std::to_string(i));
    RunConfig c;
    c.output = dir.string();
    c.correlation_length = l;
    c.paths = 200;
    ASSERT_EQ(cmd_sample(c), ok);
    corr[i++] = lag_correlation(read_csv(dir / "realizations.csv"), 20);
  }
  // squared-exponential correlation at lag 0.1: exp(-0.02) vs exp(-2)
  EXPECT_GT(corr[0], corr[1]);
  EXPECT_NEAR(corr[0], std::exp(-0.02), 0.05);
  EXPECT_NEAR(corr[1], std::exp(-2.0), 0.1);
}

TEST(Sample, ExplicitModeCount) {
  const fs::path dir = scratch("modes");
  RunConfig c;
  c.output = dir.string();
  c.modes = 3;
  ASSERT_EQ(cmd_sample(c), ok);
  const auto spectrum = read_csv(dir / "spectrum.csv");
  int retained = 0;
  for (std::size_t r = 1; r < spectrum.size(); ++r) retained += spectrum[r][3] == "1";
  EXPECT_EQ(retained, 3);
  c.modes = 0;
  EXPECT_THROW(cmd_sample(c), InvalidArgument);
}

TEST(Gradcheck, PathwiseMatchesFiniteDifferences) {
  for (auto method : {SensitivityMethod::scaled, SensitivityMethod::eigen}) {
    const fs::path dir = scratch(std::string("gc_") + std::string(to_string(method)));
    RunConfig c = small_config(dir);
    c.samples = 100;
    c.method = method;
    c.mean_basis = 6;
    ASSERT_EQ(cmd_gradcheck(c), ok);
    const auto rows = read_csv(dir / "gradcheck.csv");
    ASSERT_EQ(rows.size(), 27u);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const double rel = std::stod(rows[r][3]);
      if (rows[r][0].rfind("mean_", 0) == 0) {
        EXPECT_LE(rel, 1e-8) << rows[r][0];
      } else {
        EXPECT_LE(rel, 1e-5) << to_string(method) << " " << rows[r][0];
      }
    }
  }
}

TEST(Gradcheck, CoarseStepIsDetected) {
  const fs::path dir = scratch("gc_coarse");
  RunConfig c = small_config(dir);
  c.samples = 100;
  c.fd_step = 1.0;
  c.gradcheck_sigma = 2.0;
  EXPECT_EQ(cmd_gradcheck(c), numerical_failure);
}

TEST(Optimize, VarianceReport) {
  const fs::path dir = scratch("opt_var");
  RunConfig c = small_config(dir);
  c.samples = 500;
  ASSERT_EQ(cmd_optimize(c), ok);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const char* key : {"config_hash", "seed", "problem", "method", "samples", "status", "objective", "kkt", "iterations",
                          "modes", "partial_scatter", "epsilon_N", "max_epsilon_N", "confidence_level", "inference",
                          "max_abs_error", "ci_coverage", "output_points", "solution"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report["status"], "converged");
  EXPECT_EQ(report["solution"].size(), 20u);
  const auto rows = read_csv(dir / "optimum.csv");
  ASSERT_EQ(rows.size(), 102u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"x", "sigma_hat", "sigma_true", "ci_low", "ci_high"}));
  EXPECT_GE(read_csv(dir / "trace.csv").size(), 2u);
  EXPECT_GT(report["partial_scatter"].get<double>(), 0.9999 - 1e-12);
}

TEST(Optimize, ToleranceReport) {
  const fs::path dir = scratch("opt_tol");
  RunConfig c = small_config(dir);
  c.problem = ProblemKind::tolerance;
  c.sigma_basis = 31;
  ASSERT_EQ(cmd_optimize(c), ok);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const char* key : {"variability", "budget", "feasibility_residual", "baseline_objective", "sigma_max"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_LE(report["feasibility_residual"].get<double>(), 1e-8);
  EXPECT_LT(report["objective"].get<double>(), report["baseline_objective"].get<double>());
}

TEST(Optimize, IterationLimitExitsWithNonConvergence) {
  const fs::path dir = scratch("opt_limit");
  RunConfig c = small_config(dir);
  c.max_iter = 1;
  EXPECT_EQ(cmd_optimize(c), not_converged);
}

TEST(Converge, RejectsTolerance) {
  RunConfig c = small_config(scratch("conv_tol"));
  c.problem = ProblemKind::tolerance;
  EXPECT_THROW(cmd_converge(c), InvalidArgument);
}

TEST(Determinism, OptimizeIdenticalAcrossRunsAndThreads) {
  std::vector<std::string> reports;
  std::vector<std::string> optima;
  for (std::size_t threads : {1u, 1u, 3u}) {
    const fs::path dir = scratch("det_opt_" + std::to_string(reports.size()));
    RunConfig c = small_config(dir);
    c.method = SensitivityMethod::eigen;
    c.threads = threads;
    ASSERT_EQ(cmd_optimize(c), ok);
    reports.push_back(slurp(dir / "report.json"));
    optima.push_back(slurp(dir / "optimum.csv") + slurp(dir / "trace.csv"));
  }
  EXPECT_EQ(reports[0], reports[1]);
  EXPECT_EQ(reports[0], reports[2]);
  EXPECT_EQ(optima[0], optima[1]);
  EXPECT_EQ(optima[0], optima[2]);
}

TEST(Determinism, ConvergeIdenticalAcrossThreads) {
  std::vector<std::string> out;
  for (std::size_t threads : {1u, 4u}) {
    const fs::path dir = scratch("det_conv_" + std::to_string(threads));
    RunConfig c = small_config(dir);
    c.replications = 30;
    c.sample_sizes = {50, 100};
    c.threads = threads;
    c.trace = true;
    ASSERT_EQ(cmd_converge(c), ok);
    out.push_back(slurp(dir / "slopes.json") + slurp(dir / "hist_50.csv") + slurp(dir / "hist_100.csv") +
                  slurp(dir / "trace_100.csv"));
  }
  EXPECT_EQ(out[0], out[1]);
}

TEST(Binary, HelpAndExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("--method adjoint sample"), 1);
  EXPECT_EQ(run_cli("--config /nonexistent.json sample"), 1);
  const fs::path dir = scratch("binary");
  std::ofstream(dir / "bad.json") << R"({"field": {"correlation_length": -1}})";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " --out " + dir.string() + " sample"), 1);
  EXPECT_EQ(run_cli("--out " + dir.string() + " --seed 3 sample"), 0);
  EXPECT_NE(slurp(dir / "realizations.csv").find("seed=3"), std::string::npos);
}

TEST(Binary, HelpListsDefaults) {
  const fs::path dir = scratch("help");
  const std::string cmd = std::string(GRFOPT_CLI_PATH) + " --help > " + (dir / "help.txt").string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const std::string help = slurp(dir / "help.txt");
  for (const char* s : {"\"samples\": 10000", "\"correlation_length\": 0.1", "\"replications\": 200", "--trace", "converge"}) {
    EXPECT_NE(help.find(s), std::string::npos) << s;
  }
}
