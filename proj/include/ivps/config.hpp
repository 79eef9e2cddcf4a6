#pragma once

// Experiment configuration: an INI file with [experiment], [lqr],
// [quadrotor], [sampler], [nn], [solver] and [metrics] sections. Keys not
// present keep their defaults; unknown keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivps/nn.hpp"
#include "ivps/pmp.hpp"
#include "ivps/quadrotor.hpp"
#include "ivps/sampler.hpp"

namespace ivps {

struct LqrConfig {
  int T = 10;
  double epsilon = 0.1;
  int N = 50;
  double dt = 0.01;
  int realizations = 2000;           // training replicates for the performance-gap checks
  int eval_points = 20;              // x_init draws per replicate
  int moment_replicates = 400;
  int moment_eval_points = 200;
  std::vector<double> moment_times{2.5, 5.0, 10.0};
  std::vector<int> sweep_T{4, 8, 16, 32, 64};
  int sweep_N = 100;
  int sweep_replicates = 10;
  int sweep_eval_points = 1000;
  double path_x0 = 1.0;              // initial state of paths.csv
};

struct QuadConfig {
  quad::QuadParams params;
  double horizon = 16.0;
  std::string box = "desk";          // desk | paper
  double position_scale = 0.2;       // desk box only
  double angle_scale = 0.5;          // desk box only

  quad::InitialBox initial_box() const;
};

struct SamplerConfig {
  std::vector<double> grid{0.0, 10.0, 14.0, 16.0};
  int N = 20;
  int test = 10;
  double delta = 0.2;
  int substeps = 20;
  int initial_batch = 20;
  std::vector<int> increments{16, 12, 12};
  int candidates_per_pick = 2;
  bool warm_start_from_previous = true;
};

struct NnConfig {
  std::vector<int> hidden{128, 128};
  std::string activation = "tanh";
  nn::TrainConfig train;
  bool finetune = false;
};

struct MetricsConfig {
  std::vector<double> sigmas{0.0, 0.01, 0.05, 0.1};
  int disturbance_trials = 5;
  double rollout_dt = 0.01;
  bool mismatch = true;
};

struct ExperimentConfig {
  std::string benchmark = "quadrotor";
  std::string strategy = "ivp";
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out = "out";
  LqrConfig lqr;
  QuadConfig quadrotor;
  SamplerConfig sampler;
  NnConfig nn;
  pmp::SolverOptions solver;
  MetricsConfig metrics;

  void validate() const;
  nn::MlpSpec mlp_spec(int input_dim, int output_dim) const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(std::istream& is);
/// The effective configuration in the same INI layout.
void write_config(std::ostream& os, const ExperimentConfig& cfg);

std::vector<double> parse_double_list(const std::string& csv);
std::vector<int> parse_int_list(const std::string& csv);

}  // namespace ivps
