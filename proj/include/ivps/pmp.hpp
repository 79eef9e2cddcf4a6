#pragma once

// Indirect open-loop solver based on the minimum principle: the optimal
// control minimises H(t, x, lam, u) = L + lam . f pointwise, the costate
// obeys dlam/dt = -dH/dx with lam(T) = grad M(x(T)), and the resulting
// two-point boundary-value problem is solved by multiple shooting with a
// damped Newton method. Space marching continues the solution along the
// segment from the target state to the requested initial state.

#include <functional>
#include <optional>
#include <vector>

#include "ivps/control_core.hpp"
#include "ivps/errors.hpp"

namespace ivps::pmp {

using JacobianFn = std::function<Mat(double, const Vec&, const Vec&)>;
using GradientFn = std::function<Vec(double, const Vec&, const Vec&)>;

struct TpbvpProblem {
  ControlProblem base;
  JacobianFn f_x;  // n x n
  JacobianFn f_u;  // n x m
  GradientFn L_x;  // n
  GradientFn L_u;  // m
  std::function<Vec(const Vec&)> grad_M;
  /// Closed-form argmin_u H(t, x, lam, u); the generic Newton search is used when absent.
  std::function<Vec(double, const Vec&, const Vec&)> hamiltonian_minimizer;
  /// Optional fused right-hand side of the state-costate system, z = (x, lam)
  /// -> (f(x, u*), -dH/dx). Must agree with the pieces above; used for speed.
  std::function<Vec(double, const Vec&)> state_costate_rhs;
  /// Optional minimiser of M. When set, the cold-start guess runs the state
  /// linearly from x0 to it with lam = grad M(target) instead of using the
  /// uncontrolled rollout.
  std::optional<Vec> terminal_target;
};

/// (f(x, u*), -dH/dx) at the Hamiltonian minimiser, via the fused form when present.
Vec state_costate_rhs(const TpbvpProblem& prob, double t, const Vec& z);

struct SolverOptions {
  double dt = 0.01;               // RK4 step of the state-costate system
  int segments = 8;               // shooting segments
  int max_newton_iterations = 40;
  double tol_bc = 1e-6;           // terminal costate gap < tol_bc * (1 + |grad M|)
  double tol_stationarity = 1e-8; // max_t |dH/du|
  double tol_defect = 1e-8;       // continuity mismatch between segments
  double fd_step = 1e-6;          // relative forward-difference step for the shooting Jacobian
  double armijo_c = 1e-4;
  int max_backtracks = 30;
  int march_steps = 10;           // K of the space-marching schedule
  bool warm_start_from_previous = true;
};

struct Residuals {
  double terminal_costate_gap = 0.0;
  double max_stationarity = 0.0;
  double mesh_residual = 0.0;
};

struct MarchStep {
  int step = 0;
  bool converged = false;
  int newton_iterations = 0;
};

struct TpbvpSolution {
  Trajectory trajectory;
  std::vector<Vec> costates;
  bool converged = false;
  int newton_iterations = 0;
  Residuals residuals;
  double cost = 0.0;
  std::vector<MarchStep> march_log;

  double start_time() const { return trajectory.start_time(); }
  const Vec& initial_state() const { return trajectory.states.front(); }
  /// Linear interpolation of the costate at t (clamped to the span).
  Vec costate_at(double t) const;
};

struct MarchSchedule {
  int K = 1;
  std::vector<Vec> waypoints;  // x^1 ... x^K, x^K = x0

  /// K points spaced uniformly on the segment target -> x0.
  static MarchSchedule uniform(const Vec& target, const Vec& x0, int K);
};

class ContinuationFailed : public Error {
 public:
  ContinuationFailed(int step, std::optional<TpbvpSolution> last_good, const std::string& what)
      : Error(what), step_(step), last_good_(std::move(last_good)) {}
  int step() const { return step_; }
  const std::optional<TpbvpSolution>& last_good() const { return last_good_; }

 private:
  int step_;
  std::optional<TpbvpSolution> last_good_;
};

double hamiltonian(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u);
/// dH/du = L_u + f_u^T lam.
Vec hamiltonian_gradient_u(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u);
/// Closed form when provided, otherwise damped Newton on dH/du with a
/// finite-difference Hessian; throws StationarityError if that stalls.
Vec minimize_hamiltonian(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam);
/// Generic damped Newton minimiser, exposed for cross-checking closed forms.
Vec minimize_hamiltonian_newton(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam,
                                const Vec& u_start, double tol = 1e-10, int max_iterations = 100);
/// dlam/dt = -(L_x + f_x^T lam).
Vec costate_rhs(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u);

TpbvpSolution solve_tpbvp(const TpbvpProblem& prob, const Vec& x0, double t0,
                          const TpbvpSolution* guess = nullptr, const SolverOptions& opts = {});

/// Solves the K problems of the schedule in order, each warm-started from
/// the previous solution; throws ContinuationFailed naming the failing step.
TpbvpSolution space_march(const TpbvpProblem& prob, const Vec& x0, double t0, const MarchSchedule& schedule,
                          const SolverOptions& opts = {});

}  // namespace ivps::pmp
