#include "epoch_active/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace ea = epoch_active::cli;

int main(int argc, char** argv) {
  CLI::App app{"Epoch-based active learning with convex surrogates: experiment harness"};
  app.require_subcommand(1);

  std::string config;
  ea::Overrides o;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<double> gammas;
  std::vector<double> epsilons;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", seed, "seed (overrides the config)");
    cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "active learner and passive baseline over trials x sweep");
  common(run);
  auto* verify = app.add_subcommand("verify", "calibration assumption and excess-risk bound checks");
  common(verify);
  auto* theta = app.add_subcommand("theta", "disagreement coefficient over gamma x epsilon grids");
  common(theta);
  theta->add_option("--gamma", gammas, "gamma grid (overrides theta.gamma_grid)")->delimiter(',');
  theta->add_option("--epsilon", epsilons, "epsilon grid (overrides theta.epsilon_grid)")->delimiter(',');
  auto* report = app.add_subcommand("report", "aggregate results.csv into rate fits and plot columns");
  std::string report_dir;
  report->add_option("--out", report_dir, "directory holding results.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ea::exit_config;
  }

  auto finalize = [&](CLI::App* cmd) {
    if (cmd->count("--out") > 0) o.out = out;
    if (cmd->count("--seed") > 0) o.seed = seed;
    if (!gammas.empty()) o.gamma_grid = gammas;
    if (!epsilons.empty()) o.epsilon_grid = epsilons;
  };
  try {
    if (*run) {
      finalize(run);
      return ea::cmd_run(config, o);
    }
    if (*verify) {
      finalize(verify);
      return ea::cmd_verify(config, o);
    }
    if (*theta) {
      finalize(theta);
      return ea::cmd_theta(config, o);
    }
    return ea::cmd_report(report_dir);
  } catch (const ea::ConfigError& e) {
    return ea::report_config_error(e, config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ea::exit_runtime;
  }
}
