#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "grfopt/app/commands.hpp"

namespace {

std::string defaults_text() {
  std::string text = "Config file (JSON). Every field is optional; defaults:\n";
  text += grfopt::app::to_json(grfopt::app::RunConfig{}).dump(2);
  text += "\n\nExit status: 0 success, 1 validation error, 2 numerical failure, 3 solver non-convergence.\n";
  return text;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimization of Gaussian random field parameters with pathwise sensitivities"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.footer(defaults_text());

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> samples;
  std::string method;
  std::optional<std::size_t> threads;
  bool trace = false;

  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--seed", seed, "base seed (default: 1)");
  app.add_option("--samples", samples, "Monte Carlo sample count N (default: 10000)");
  app.add_option("--method", method, "sensitivity method (default: scaled)")->check(CLI::IsMember({"eigen", "scaled"}));
  app.add_option("--threads", threads, "worker threads; results do not depend on it (default: 1)");
  app.add_flag("--trace", trace, "print solver iterations; converge also writes trace_<N>.csv");

  auto* sample = app.add_subcommand("sample", "write field realizations and the eigenvalue spectrum");
  auto* gradcheck = app.add_subcommand("gradcheck", "compare pathwise gradients with finite differences");
  auto* optimize = app.add_subcommand("optimize", "solve one SAA problem and report confidence intervals");
  auto* converge = app.add_subcommand("converge", "replication study of the SAA error versus N");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : grfopt::app::validation_error;
  }

  try {
    grfopt::app::RunConfig config;
    if (!config_path.empty()) config = grfopt::app::load_config(config_path);
    if (!out_dir.empty()) config.output = out_dir;
    if (seed) config.seed = *seed;
    if (samples) config.samples = *samples;
    if (!method.empty()) config.method = grfopt::sensitivity_method_from_string(method);
    if (threads) config.threads = *threads;
    config.trace = trace;

    if (sample->parsed()) return grfopt::app::cmd_sample(config);
    if (gradcheck->parsed()) return grfopt::app::cmd_gradcheck(config);
    if (optimize->parsed()) return grfopt::app::cmd_optimize(config);
    if (converge->parsed()) return grfopt::app::cmd_converge(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return grfopt::app::exit_code_for(e);
  }
  return grfopt::app::validation_error;
}
