#pragma once

// One-dimensional LQR benchmark:
//   min (1/T) int_t0^T u^2 dt + x(T)^2,   dx/dt = u,
// with a noisy open-loop oracle whose optimal paths are perturbed by a
// random constant control offset. Every quantity of the training loops
// has a closed form, so the regression pipeline can be checked against
// algebra instead of tolerances.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ivps/control_core.hpp"
#include "ivps/pmp.hpp"

namespace ivps::lqr {

using Rng = std::mt19937_64;

struct LqrSpec {
  int T = 10;              // horizon, positive integer
  double epsilon = 0.1;    // oracle noise scale
  int N = 50;              // paths per iteration
  double dt = 0.01;        // node spacing of the coefficient grid and rollout step

  void validate() const;
  long nodes() const;      // T / dt + 1
  double node_time(long k) const { return static_cast<double>(k) * dt; }
};

enum class Model { kModel1, kModel2 };
enum class Method { kVanilla, kIvpEnhanced };

std::string to_string(Model m);
std::string to_string(Method m);

/// s(t) = T(T - t) + 1, the denominator shared by all closed forms.
inline double gain_denominator(double t, double T) { return T * (T - t) + 1.0; }

/// u*(t, x) = -T x / (T(T - t) + 1).
double optimal_closed_loop(double t, double x, double T);
/// Optimal constant open-loop control from (t0, x0).
double optimal_open_loop(double t0, double x0, double T);
/// J_o(x0) = x0^2 / (T^2 + 1) for a start at t = 0.
double optimal_cost(double x0, double T);

/// The benchmark as a generic control problem (n = m = 1).
ControlProblem make_problem(double T);
/// The same problem with its PMP ingredients; u* = -T lambda / 2.
pmp::TpbvpProblem make_tpbvp(double T);

/// One approximate optimal path returned by the noisy oracle.
struct NoisyPath {
  double t0 = 0.0;
  double x0 = 0.0;
  double z = 0.0;
  double T = 1.0;
  double epsilon = 0.0;

  double u_hat(double /*t*/) const { return -T * x0 / gain_denominator(t0, T) + epsilon * z; }
  double x_hat(double t) const {
    return x0 * gain_denominator(t, T) / gain_denominator(t0, T) + (t - t0) * epsilon * z;
  }
};

/// Draws Z ~ N(0, 1) from rng and returns the perturbed optimal path.
NoisyPath noisy_open_loop(double t0, double x0, const LqrSpec& spec, Rng& rng);

/// Training paths indexed by the iteration that produced them. The
/// coefficient at node t is fitted from the paths of iteration
/// min(floor(t), last), which is exactly the splice rule on knots t_i = i.
struct LqrData {
  int T = 1;
  std::vector<std::vector<NoisyPath>> by_iteration;

  int owner(double t) const;
  const std::vector<NoisyPath>& paths_at(double t) const { return by_iteration[owner(t)]; }
};

struct Model1Params {
  std::vector<double> b;
};

struct Model2Params {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> ridge_times;  // nodes where the ridge fallback was used
};

struct SliceFit {
  double a = 0.0;
  double b = 0.0;
  bool ridge = false;
};

/// b = mean(u + T x / (T(T - t) + 1)) over one time slice.
double fit_slice_model1(double t, double T, const std::vector<double>& x, const std::vector<double>& u);
/// Ordinary least squares u ~ a x + b on one time slice. A slice with zero
/// x-spread raises SingularFit unless allow_ridge, in which case a ridge
/// penalty 1e-12 a^2 is added and the result is flagged.
SliceFit fit_slice_model2(const std::vector<double>& x, const std::vector<double>& u, bool allow_ridge);

Model1Params fit_model1(const LqrData& data, const LqrSpec& spec);
Model2Params fit_model2(const LqrData& data, const LqrSpec& spec, bool allow_ridge = true);

/// Linear-in-x controller u = a(t) x + b(t) with coefficients stored on a
/// uniform node grid.
///
/// Between nodes the scaled coefficients (T(T - t) + 1) a(t) and
/// (T(T - t) + 1) b(t) are interpolated linearly, never across a knot of
/// the temporal grid; on the last cell before a knot they are extrapolated
/// from inside the interval. The scaled Model-1 coefficients are constant
/// on every interval, so this reproduces the analytic controllers exactly.
class LqrController final : public ClosedLoopController {
 public:
  LqrController(Model model, double T, double dt, std::vector<double> knots,
                std::vector<double> a_nodes, std::vector<double> b_nodes);

  static LqrController from_model1(const Model1Params& p, const LqrSpec& spec, std::vector<double> knots);
  static LqrController from_model2(const Model2Params& p, const LqrSpec& spec, std::vector<double> knots);
  static LqrController optimal(double T, double dt);

  Vec evaluate(double t, const Vec& x) const override;
  Vec evaluate_before(double t, const Vec& x) const override;

  double control(double t, double x, bool before = false) const;
  double a_at(double t, bool before = false) const;
  double b_at(double t, bool before = false) const;

  Model model() const { return model_; }
  double horizon() const { return T_; }
  const std::vector<double>& knots() const { return knots_; }

 private:
  double scaled(const std::vector<double>& v, double t, bool before) const;

  Model model_;
  double T_;
  double dt_;
  std::vector<double> knots_;
  std::vector<double> scaled_a_;  // empty for Model 1
  std::vector<double> scaled_b_;
};

/// Fixed-step RK4 rollout of dx/dt = controller(t, x) specialised to the
/// scalar problem; same scheme and grid as integrate_ivp.
struct ScalarRollout {
  std::vector<double> x;  // x at nodes t0 + k dt
  double cost = 0.0;      // trapezoidal (1/T) int u^2 + x(T)^2, valid when the rollout ends at T
};
ScalarRollout rollout(const LqrController& controller, double x0, double t0, double t1, double dt);

struct LqrRun {
  std::shared_ptr<const LqrController> controller;
  LqrData data;
  std::vector<double> initial_states;
  /// reached[i][j]: state of path j at knot t_i when iteration i started.
  std::vector<std::vector<double>> reached;
  long oracle_calls = 0;
  std::vector<std::string> warnings;
};

/// N T initial states from N(0, 1), one noisy path each from t = 0, one fit.
LqrRun run_vanilla(const LqrSpec& spec, Model model, Rng rng);
/// The iterative scheme with knots 0 < 1 < ... < T: roll the previous
/// controller to t_i, query the oracle from the reached states, splice,
/// refit. Uses N T oracle calls in total.
LqrRun run_ivp_enhanced(const LqrSpec& spec, Model model, Rng rng);
LqrRun run_method(const LqrSpec& spec, Method method, Model model, Rng rng);

/// Closed-form predictions for Model 1.
struct Theorem1Report {
  double vanilla_perf_gap = 0.0;       // (T^2 + 1) eps^2 / (N T)
  double ivp_perf_gap_exact = 0.0;     // eps^2 / N (2 + sum_{k=1}^{T-1} 1 / (T k + 1))
  double ivp_perf_gap_bound = 0.0;     // 3 eps^2 / N
  double ivp_moment_gap_bound = 0.0;   // eps^2
  std::function<double(double)> vanilla_moment_gap;  // (1 - 1/(N T)) eps^2 t^2
  std::function<double(double)> ivp_moment_gap;      // eps^2 (t - i)^2 (1 - 1/N)
};
Theorem1Report theorem1_predictions(const LqrSpec& spec);

/// Closed-form reached states of the IVP-enhanced Model-1 pipeline at knot i,
/// given the initial state and the per-iteration noise means.
double model1_reached_state(int i, double x_init, const std::vector<double>& noise_means, const LqrSpec& spec);

/// Per-iteration empirical noise means (mean of z over the iteration's paths).
std::vector<double> noise_means(const LqrData& data);

struct GapEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_replicate;
};

using ControllerFactory = std::function<std::shared_ptr<const LqrController>(Rng)>;

/// Average of J_controller - J_o over controller replicates and N(0, 1)
/// evaluation points. Replicate r trains with seed base_seed + r; the
/// evaluation points use an independent stream. The standard error is the
/// sample standard deviation across replicates over sqrt(n_repeats).
GapEstimate monte_carlo_perf_gap(const ControllerFactory& factory, const LqrSpec& spec, int n_repeats,
                                 int n_eval_points, std::uint64_t base_seed, int threads = 1);

struct MomentGapEstimate {
  double t = 0.0;
  double predicted = 0.0;          // closed form
  double training_moment = 0.0;    // empirical E|x_hat(t)|^2
  double reached_moment = 0.0;     // empirical E|x(t)|^2
  double empirical = 0.0;          // |training - reached|, averaged over replicates
  double std_error = 0.0;
};

/// Second-moment gap between training states and states reached by the
/// learned controller from fresh N(0, 1) initial points.
std::vector<MomentGapEstimate> moment_gap_experiment(const LqrSpec& spec, Method method, Model model,
                                                     const std::vector<double>& times, int n_repeats,
                                                     int n_eval_points, std::uint64_t base_seed,
                                                     int threads = 1);

/// Independent evaluation stream for replicate r.
Rng evaluation_rng(std::uint64_t base_seed, int replicate);

}  // namespace ivps::lqr
