#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ivps/config.hpp"
#include "ivps/errors.hpp"
#include "ivps/experiment.hpp"

using namespace ivps;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IVPS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ivps_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_run(const fs::path& dir, const std::string& strategy, const std::string& rows) {
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.txt") << "benchmark=quadrotor\nstrategy=" << strategy << "\n";
  std::ofstream(dir / "summary.csv") << "policy,mean,std,max,p90,p75,median,diverged\n" << rows;
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream is(
      "[experiment]\nbenchmark = lqr\nseed = 9\n[sampler]\ngrid = 0,4,8,10,12,14,16\n[nn]\nhidden = 64,32\n");
  const auto cfg = parse_config(is);
  CHECK(cfg.benchmark == "lqr");
  CHECK(cfg.seed == 9u);
  CHECK(cfg.sampler.grid.size() == 7u);
  CHECK(cfg.nn.hidden == std::vector<int>{64, 32});
  CHECK(cfg.sampler.N == 20);

  std::stringstream echo;
  write_config(echo, cfg);
  const auto back = parse_config(echo);
  std::stringstream again;
  write_config(again, back);
  CHECK(echo.str() == again.str());

  std::istringstream unknown("[sampler]\nsize = 3\n");
  CHECK_THROWS_AS(parse_config(unknown), DomainError);
  std::istringstream bad_grid("[sampler]\ngrid = 0,10,12\n");
  CHECK_THROWS_AS(parse_config(bad_grid), DomainError);
  std::istringstream bad_strategy("[experiment]\nstrategy = dagger\n");
  CHECK_THROWS_AS(parse_config(bad_strategy), DomainError);
}

TEST_CASE("shipped configs load") {
  const auto desk = load_config(std::string(IVPS_CONFIG_DIR) + "/desk.ini");
  CHECK(desk.sampler.N == 20);
  CHECK(desk.sampler.test == 10);
  const auto paper = load_config(std::string(IVPS_CONFIG_DIR) + "/paper.ini");
  CHECK(paper.quadrotor.box == "paper");
  CHECK(paper.sampler.N == 500);
  CHECK(load_config(std::string(IVPS_CONFIG_DIR) + "/lqr.ini").benchmark == "lqr");
}

TEST_CASE("default LQR sweep horizons") {
  const ExperimentConfig cfg;
  CHECK(cfg.lqr.sweep_T == std::vector<int>{4, 8, 16, 32, 64});
  CHECK(cfg.sampler.grid == std::vector<double>{0.0, 10.0, 14.0, 16.0});
}

TEST_CASE("report merges runs") {
  const auto root = scratch("report");
  write_run(root / "a", "ivp", "final,1.5,0.1,2,1.9,1.6,1.4,0\n");
  write_run(root / "b", "vanilla", "final,3.5,0.1,4,3.9,3.6,3.4,0\n");
  std::ostringstream log;

  CHECK(experiment::cmd_report({(root / "a").string()}, (root / "one").string(), log) == 0);
  CHECK(slurp(root / "one" / "summary.csv") == slurp(root / "a" / "summary.csv"));

  CHECK(experiment::cmd_report({(root / "a").string(), (root / "b").string()}, (root / "ab").string(), log) == 0);
  CHECK(experiment::cmd_report({(root / "b").string(), (root / "a").string()}, (root / "ba").string(), log) == 0);
  CHECK(slurp(root / "ab" / "summary.csv") == slurp(root / "ba" / "summary.csv"));
  CHECK(slurp(root / "ab" / "summary.csv").find("a/final") != std::string::npos);

  CHECK(experiment::cmd_report({(root / "missing").string()}, (root / "x").string(), log) != 0);
  fs::create_directories(root / "empty");
  CHECK(experiment::cmd_report({(root / "empty").string()}, (root / "x").string(), log) != 0);
}

TEST_CASE("cli") {
  const auto root = scratch("cli");
  CHECK(run_cli("report " + (root / "nope").string() + " --out " + (root / "r").string()) != 0);
  CHECK(run_cli("bogus") != 0);

  std::ofstream(root / "tiny.ini") << "[lqr]\nT = 2\nN = 5\nrealizations = 4\neval_points = 3\n"
                                      "moment_replicates = 3\nmoment_eval_points = 5\nmoment_times = 1,2\n"
                                      "sweep_T = 2,4\nsweep_N = 5\nsweep_replicates = 2\nsweep_eval_points = 3\n";
  const std::string cfg = (root / "tiny.ini").string();
  REQUIRE(run_cli("lqr --config " + cfg + " --threads 1 --out " + (root / "a").string()) == 0);
  REQUIRE(run_cli("lqr --config " + cfg + " --threads 2 --out " + (root / "b").string()) == 0);
  for (const char* f : {"theorem1.csv", "model2_gap_vs_T.csv", "paths.csv", "manifest.txt"}) {
    CHECK_MESSAGE(fs::exists(root / "a" / f), f);
    CHECK_MESSAGE(slurp(root / "a" / f) == slurp(root / "b" / f), f);
  }
  CHECK(fs::exists(root / "a" / "config.echo"));
}
