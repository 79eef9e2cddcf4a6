// Command-line front end: ivps lqr | quadrotor | report.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "ivps/config.hpp"
#include "ivps/errors.hpp"
#include "ivps/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--threads", c.threads, "worker threads (0 = hardware concurrency)");
  cmd->add_option("--out", c.out, "output directory");
}

ivps::ExperimentConfig resolve(const Common& c, const std::string& benchmark) {
  ivps::ExperimentConfig cfg = c.config.empty() ? ivps::ExperimentConfig{} : ivps::load_config(c.config);
  cfg.benchmark = benchmark;
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop controller learning with initial-value-problem sampling"};
  app.require_subcommand(1);

  Common lqr_opts;
  bool check = false;
  auto* lqr = app.add_subcommand("lqr", "scalar LQR study");
  add_common(lqr, lqr_opts);
  lqr->add_flag("--check", check, "exit nonzero when a closed-form prediction is not reproduced");

  Common quad_opts;
  std::string strategy, grid;
  auto* quad = app.add_subcommand("quadrotor", "quadrotor landing study");
  add_common(quad, quad_opts);
  quad->add_option("--strategy", strategy, "ivp | vanilla | as_large_u | as_large_v | as_bad_v");
  quad->add_option("--grid", grid, "comma-separated temporal grid, e.g. 0,10,14,16");

  std::vector<std::string> runs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "merge the summaries of finished runs");
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*lqr) {
      auto cfg = resolve(lqr_opts, "lqr");
      if (lqr_opts.out.empty() && lqr_opts.config.empty()) cfg.out = "out/lqr";
      cfg.validate();
      return ivps::experiment::cmd_lqr(cfg, check, std::cout);
    }
    if (*quad) {
      auto cfg = resolve(quad_opts, "quadrotor");
      if (!strategy.empty()) cfg.strategy = strategy;
      if (!grid.empty()) cfg.sampler.grid = ivps::parse_double_list(grid);
      if (quad_opts.out.empty() && quad_opts.config.empty()) cfg.out = "out/" + cfg.strategy;
      cfg.validate();
      return ivps::experiment::cmd_quadrotor(cfg, std::cout);
    }
    return ivps::experiment::cmd_report(runs, report_out, std::cout);
  } catch (const ivps::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
