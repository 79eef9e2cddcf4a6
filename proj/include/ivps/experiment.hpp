#pragma once

// Experiment drivers behind the command-line tool: the LQR study, the
// quadrotor sampling study and the cross-run report.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ivps/config.hpp"
#include "ivps/lqr.hpp"
#include "ivps/metrics.hpp"
#include "ivps/sampler.hpp"

namespace ivps::experiment {

// ---- LQR -------------------------------------------------------------------

struct Theorem1Row {
  std::string quantity;
  double predicted = 0.0;
  double empirical = 0.0;
  double std_error = 0.0;
};

struct LqrChecks {
  bool vanilla_perf = false;   // |empirical - predicted| <= 3 SE
  bool ivp_perf = false;       // empirical <= 3 eps^2 / N + 3 SE
  bool vanilla_moment = false; // every time within 3 SE of the law
  bool ivp_moment = false;     // every time <= eps^2 + 3 SE
  bool sweep_trend = false;    // vanilla(Tmax) > 4 vanilla(Tmin), ivp(Tmax) < 3 ivp(Tmin)
};

struct GapRow {
  int T = 0;
  std::string method;
  double gap = 0.0;
  double std_error = 0.0;
};

std::vector<Theorem1Row> theorem1_performance(const LqrConfig& cfg, std::uint64_t seed, int threads);
std::vector<Theorem1Row> theorem1_moments(const LqrConfig& cfg, std::uint64_t seed, int threads);
std::vector<GapRow> model2_sweep(const LqrConfig& cfg, std::uint64_t seed, int threads);

bool check_vanilla_perf(const std::vector<Theorem1Row>& rows);
bool check_ivp_perf(const std::vector<Theorem1Row>& rows);
bool check_vanilla_moments(const std::vector<Theorem1Row>& rows);
bool check_ivp_moments(const std::vector<Theorem1Row>& rows, const LqrConfig& cfg);
bool check_sweep_trend(const std::vector<GapRow>& rows);

int cmd_lqr(const ExperimentConfig& cfg, bool check, std::ostream& log);

// ---- Quadrotor -------------------------------------------------------------

struct QuadSetup {
  ControlProblem problem;
  std::shared_ptr<sampler::CachingSolver> solver;
  quad::InitialBox box;
  std::vector<Vec> test_states;
  std::vector<pmp::TpbvpSolution> test_refs;  // converged test solves only
  std::vector<std::string> log;
};

/// Builds the landing problem and solver and solves the test set.
QuadSetup make_quad_setup(const ExperimentConfig& cfg);

struct StrategyResult {
  sampler::SamplingRun run;
  std::vector<metrics::RatioTable> ratios;                   // test ratios per iteration controller
  std::vector<std::vector<metrics::MismatchPoint>> mismatch;  // per iteration (when requested)
  std::vector<std::vector<double>> loss_curves;
};

StrategyResult run_quad_strategy(const QuadSetup& setup, const ExperimentConfig& cfg, sampler::Strategy strategy,
                                 bool with_mismatch);

int cmd_quadrotor(const ExperimentConfig& cfg, std::ostream& log);

// ---- Report ----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir, std::ostream& log);

}  // namespace ivps::experiment
