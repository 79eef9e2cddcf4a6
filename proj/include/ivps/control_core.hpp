#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ivps {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Times closer than this are considered equal when aligning grids.
inline constexpr double kTimeEps = 1e-9;

/// A finite-horizon optimal control problem
///   min  int_t0^T L(t, x, u) dt + M(x(T))   s.t.  dx/dt = f(t, x, u).
struct ControlProblem {
  int state_dim = 0;
  int control_dim = 0;
  double horizon = 0.0;
  std::function<Vec(double, const Vec&, const Vec&)> dynamics;
  std::function<double(double, const Vec&, const Vec&)> running_cost;
  std::function<double(const Vec&)> terminal_cost;
  std::optional<Vec> control_lower;
  std::optional<Vec> control_upper;

  /// Throws DomainError when the invariants do not hold.
  void validate() const;
  /// Coordinate-wise clamp into the control bounds (identity when unbounded).
  Vec clamp(Vec u) const;
};

/// Closed-loop policy u(t, x).
///
/// Controllers that are only piecewise continuous in time (e.g. ones fitted
/// separately on each interval of a temporal grid) override evaluate_before()
/// to return the left limit; integrators use it for the stage that lands on
/// the end of a step.
class ClosedLoopController {
 public:
  virtual ~ClosedLoopController() = default;
  virtual Vec evaluate(double t, const Vec& x) const = 0;
  virtual Vec evaluate_before(double t, const Vec& x) const { return evaluate(t, x); }
};

/// Adapts any callable (t, x) -> u.
class FunctionController final : public ClosedLoopController {
 public:
  explicit FunctionController(std::function<Vec(double, const Vec&)> fn) : fn_(std::move(fn)) {}
  Vec evaluate(double t, const Vec& x) const override { return fn_(t, x); }

 private:
  std::function<Vec(double, const Vec&)> fn_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> controls;

  std::size_t size() const { return times.size(); }
  double start_time() const { return times.front(); }
  double end_time() const { return times.back(); }
  /// Throws DomainError on inconsistent lengths, non-increasing times or bad dims.
  void validate(int state_dim, int control_dim) const;
  /// Linear interpolation of the state at time t (clamped to the span).
  Vec state_at(double t) const;
  /// Linear interpolation of the control at time t (clamped to the span).
  Vec control_at(double t) const;
};

struct DataPoint {
  double t = 0.0;
  Vec x;
  Vec u;
};

/// Time-state-control tuples grouped by the open-loop solve they came from.
///
/// `trajectory_ids[k]` names the solve that produced point k and
/// `origins[k]` the index of the initial point whose exploration led to
/// that solve; the two differ once the dataset has been spliced.
struct Dataset {
  double delta = 0.0;
  std::vector<DataPoint> points;
  std::vector<int> trajectory_ids;
  std::vector<int> origins;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void append(std::vector<DataPoint> pts, int trajectory_id, int origin);
  /// Checks the delta-alignment and uniqueness invariants.
  void validate() const;
};

struct TemporalGrid {
  std::vector<double> knots;

  TemporalGrid() = default;
  explicit TemporalGrid(std::vector<double> k);
  int intervals() const { return static_cast<int>(knots.size()) - 1; }
  double horizon() const { return knots.back(); }
  /// Index i with knots[i] <= t < knots[i+1]; the last interval is closed.
  int interval_of(double t) const;
  static TemporalGrid uniform(double horizon, int intervals);
};

/// Fixed-step classical RK4 rollout of dx/dt = f(t, x, controller(t, x)).
///
/// The step count is ceil((t1 - t0) / dt); when dt does not divide the span,
/// the last step is shortened. Throws IntegrationDiverged on a non-finite state.
Trajectory integrate_ivp(const ControlProblem& problem, const ClosedLoopController& controller,
                         const Vec& x0, double t0, double t1, double dt);

/// Trapezoidal running cost along the grid plus the terminal cost.
double evaluate_cost(const ControlProblem& problem, const Trajectory& traj);

/// Points at t0, t0 + delta, ... taken from a trajectory whose step divides delta.
std::vector<DataPoint> sample_dataset(const Trajectory& traj, double delta);

/// CSV with header t,x0..x{n-1},u0..u{m-1}; 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& is, int state_dim, int control_dim);

/// Writes trajectory_id,origin,t,x...,u... rows.
void write_dataset_csv(std::ostream& os, const Dataset& data);

}  // namespace ivps
