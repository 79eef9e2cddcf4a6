#pragma once

// Distribution-mismatch diagnostics, cost-ratio statistics and disturbance
// robustness of learned controllers.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivps/control_core.hpp"
#include "ivps/pmp.hpp"

namespace ivps::metrics {

struct SnapshotPair {
  double t = 0.0;
  std::vector<Vec> training_states;
  std::vector<Vec> reached_states;  // index-aligned with training_states
};

/// Mean Euclidean distance between aligned pairs; AlignmentError on a size mismatch.
double pointwise_distance(const SnapshotPair& pair);

/// Gaussian-kernel MMD with k(x, y) = exp(-|x - y|^2 / 2), returned as
/// sqrt(max(0, MMD^2)). The biased V-statistic by default.
double mmd_gaussian(const std::vector<Vec>& X, const std::vector<Vec>& Y, bool unbiased = false);

struct RatioSummary {
  double mean = 0.0;
  double std = 0.0;
  double max = 0.0;
  double p90 = 0.0;
  double p75 = 0.0;
  double median = 0.0;
  int count = 0;
  int diverged = 0;
};

/// Summary over finite ratios; +inf entries are counted in `diverged` and make max infinite.
RatioSummary summarize_ratios(const std::vector<double>& ratios);
/// Linear-interpolated percentile (q in [0, 100]) of sorted finite values.
double percentile(std::vector<double> values, double q);

struct RatioTable {
  std::vector<double> ratios;
  RatioSummary summary;
};

/// Rolls the controller from each reference's initial state (and start time)
/// to T and divides its cost by the reference cost.
RatioTable cost_ratio_table(const ControlProblem& problem, const ClosedLoopController& controller,
                            const std::vector<pmp::TpbvpSolution>& refs, double rollout_dt, int threads = 1);

/// As cost_ratio_table, with the controller input (t, x) perturbed at every
/// rollout step by a fresh uniform draw on [-sigma, sigma]^(1+n); `trials`
/// rollouts per reference. Ratios are ordered reference-major.
RatioTable disturbance_eval(const ControlProblem& problem, const ClosedLoopController& controller,
                            const std::vector<pmp::TpbvpSolution>& refs, double sigma, int trials,
                            double rollout_dt, std::uint64_t seed, int threads = 1);

/// Replays each reference's open-loop control at a perturbed time t + e,
/// e ~ U[-sigma, sigma] drawn per step, interpolating the stored control linearly.
RatioTable open_loop_time_disturbance(const ControlProblem& problem, const std::vector<pmp::TpbvpSolution>& refs,
                                      double sigma, int trials, double rollout_dt, std::uint64_t seed,
                                      int threads = 1);

/// Empirical CDF points (ratio, fraction <= ratio). Diverged rollouts count
/// in the denominator and appear as a final (inf, 1) point.
std::vector<std::pair<double, double>> ratio_cdf(const std::vector<double>& ratios);

struct MismatchPoint {
  double t = 0.0;
  double pointwise = 0.0;
  double mmd = 0.0;
};

/// Training states of the dataset against the states the controller reaches
/// from the same initial points, at every dataset time. initial_states is
/// indexed by the dataset's origin labels.
std::vector<MismatchPoint> mismatch_curve(const ControlProblem& problem, const ClosedLoopController& controller,
                                          const Dataset& data, const std::vector<Vec>& initial_states,
                                          double rollout_dt, int threads = 1);

struct KnotJump {
  double knot = 0.0;
  double jump = 0.0;             // |v(t_k) - v(t_k - delta)|
  double median_off_knot = 0.0;  // median of the other one-step changes
  bool discontinuous = false;    // jump > median_off_knot
};

std::vector<KnotJump> knot_discontinuities(const std::vector<MismatchPoint>& curve,
                                           const std::vector<double>& interior_knots, bool use_mmd = false);

void write_ratios_csv(std::ostream& os, const std::vector<double>& ratios);
void write_summary_header(std::ostream& os);
void write_summary_row(std::ostream& os, const std::string& policy, const RatioSummary& s);
void write_mismatch_csv(std::ostream& os, const std::vector<MismatchPoint>& curve);
void write_cdf_csv(std::ostream& os, const std::vector<double>& ratios);

}  // namespace ivps::metrics
