#include "ivps/pmp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ivps::pmp {

namespace {

struct Grid {
  std::vector<double> times;      // t0 = times[0] < ... < times.back() = T
  std::vector<int> boundaries;    // node indices of segment starts, plus the last node
  int segments() const { return static_cast<int>(boundaries.size()) - 1; }
};

Grid make_grid(double t0, double T, double dt, int segments) {
  const double span = T - t0;
  long full = static_cast<long>(std::floor(span / dt + 1e-9));
  const bool tail = span - static_cast<double>(full) * dt > kTimeEps * std::max(1.0, span);
  Grid g;
  for (long k = 0; k <= full; ++k) g.times.push_back(t0 + static_cast<double>(k) * dt);
  if (tail) g.times.push_back(T);
  else g.times.back() = T;
  const int steps = static_cast<int>(g.times.size()) - 1;
  const int s_eff = std::max(1, std::min(segments, steps));
  for (int s = 0; s <= s_eff; ++s)
    g.boundaries.push_back(static_cast<int>(std::lround(static_cast<double>(s) * steps / s_eff)));
  return g;
}

Vec rk4_step(const TpbvpProblem& prob, double t, double h, const Vec& z) {
  const Vec k1 = state_costate_rhs(prob, t, z);
  const Vec k2 = state_costate_rhs(prob, t + 0.5 * h, z + 0.5 * h * k1);
  const Vec k3 = state_costate_rhs(prob, t + 0.5 * h, z + 0.5 * h * k2);
  const Vec k4 = state_costate_rhs(prob, t + h, z + h * k3);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Integrates segment s from z; returns the end value, and the nodes when requested.
Vec integrate_segment(const TpbvpProblem& prob, const Grid& g, int s, Vec z, std::vector<Vec>* nodes) {
  const int a = g.boundaries[s], b = g.boundaries[s + 1];
  if (nodes) nodes->push_back(z);
  for (int k = a; k < b; ++k) {
    try {
      z = rk4_step(prob, g.times[k], g.times[k + 1] - g.times[k], z);
    } catch (const SingularityError& e) {
      throw IntegrationDiverged(g.times[k], std::string("state-costate integration hit a singularity: ") + e.what());
    }
    if (!z.allFinite()) throw IntegrationDiverged(g.times[k], "state-costate integration produced a non-finite value");
    if (nodes) nodes->push_back(z);
  }
  return z;
}

// Unknown layout: lam(t0), then (x_s, lam_s) for s = 1 .. S-1.
struct Shooting {
  const TpbvpProblem& prob;
  const Grid& grid;
  const Vec& x0;
  int n;

  int unknowns() const { return n + 2 * n * (grid.segments() - 1); }

  Vec segment_start(const Vec& w, int s) const {
    Vec z(2 * n);
    if (s == 0) {
      z << x0, w.head(n);
    } else {
      z = w.segment(n + 2 * n * (s - 1), 2 * n);
    }
    return z;
  }

  // Residual block of segment s given its start value.
  Vec segment_residual(const Vec& w, int s, const Vec& z_start) const {
    const Vec z_end = integrate_segment(prob, grid, s, z_start, nullptr);
    if (s + 1 < grid.segments()) return z_end - segment_start(w, s + 1);
    const Vec x_end = z_end.head(n);
    return z_end.tail(n) - prob.grad_M(x_end);
  }

  Vec residual(const Vec& w) const {
    Vec f(unknowns());
    for (int s = 0; s < grid.segments(); ++s) {
      const int rows = s + 1 < grid.segments() ? 2 * n : n;
      f.segment(2 * n * s, rows) = segment_residual(w, s, segment_start(w, s));
    }
    return f;
  }

  Mat jacobian(const Vec& w, const Vec& f, double fd_step) const {
    const int dim = unknowns();
    Mat jac = Mat::Zero(dim, dim);
    for (int s = 0; s < grid.segments(); ++s) {
      const bool last = s + 1 == grid.segments();
      const int rows = last ? n : 2 * n;
      const int row0 = 2 * n * s;
      const Vec base = f.segment(row0, rows);
      const Vec z = segment_start(w, s);
      // Columns of the unknowns that feed this segment.
      const int first_local = s == 0 ? n : 0;
      const int col0 = s == 0 ? 0 : n + 2 * n * (s - 1);
      for (int j = first_local; j < 2 * n; ++j) {
        const double h = fd_step * (1.0 + std::abs(z[j]));
        Vec zp = z;
        zp[j] += h;
        const Vec fp = segment_residual(w, s, zp);
        jac.block(row0, col0 + (j - first_local), rows, 1) = (fp - base) / h;
      }
      if (!last) {
        const int next = n + 2 * n * s;
        jac.block(row0, next, 2 * n, 2 * n) -= Mat::Identity(2 * n, 2 * n);
      }
    }
    return jac;
  }
};

struct Assessment {
  Residuals residuals;
  bool converged = false;
};

Assessment assess(const TpbvpProblem& prob, const Grid& g, const Vec& w, const Vec& f, int n,
                  const SolverOptions& opts, const Shooting& sh) {
  Assessment a;
  double defect = 0.0;
  const int s_count = g.segments();
  if (s_count > 1) defect = f.head(2 * n * (s_count - 1)).cwiseAbs().maxCoeff();
  const Vec z_last = sh.segment_start(w, s_count - 1);
  const Vec z_end = integrate_segment(prob, g, s_count - 1, z_last, nullptr);
  const Vec grad = prob.grad_M(z_end.head(n));
  a.residuals.terminal_costate_gap = f.tail(n).norm();
  a.residuals.mesh_residual = defect;
  // Stationarity at the segment starts; with the minimiser applied at every
  // node the full check is repeated on the final trajectory.
  double stat = 0.0;
  for (int s = 0; s < s_count; ++s) {
    const Vec z = sh.segment_start(w, s);
    const double t = g.times[g.boundaries[s]];
    const Vec x = z.head(n), lam = z.tail(n);
    const Vec u = minimize_hamiltonian(prob, t, x, lam);
    stat = std::max(stat, hamiltonian_gradient_u(prob, t, x, lam, u).cwiseAbs().maxCoeff());
  }
  a.residuals.max_stationarity = stat;
  a.converged = a.residuals.terminal_costate_gap < opts.tol_bc * (1.0 + grad.norm()) &&
                defect < opts.tol_defect && stat < opts.tol_stationarity;
  return a;
}

Vec initial_unknowns(const TpbvpProblem& prob, const Grid& g, const Vec& x0, const TpbvpSolution* guess, int n) {
  const int s_count = g.segments();
  Vec w(n + 2 * n * (s_count - 1));
  if (guess) {
    w.head(n) = guess->costate_at(g.times.front());
    for (int s = 1; s < s_count; ++s) {
      const double t = g.times[g.boundaries[s]];
      w.segment(n + 2 * n * (s - 1), n) = guess->trajectory.state_at(t);
      w.segment(n + 2 * n * (s - 1) + n, n) = guess->costate_at(t);
    }
    return w;
  }
  if (prob.terminal_target) {
    const Vec& target = *prob.terminal_target;
    const Vec lam = prob.grad_M(target);
    const double t0 = g.times.front(), span = g.times.back() - t0;
    w.head(n) = lam;
    for (int s = 1; s < s_count; ++s) {
      const double a = (g.times[g.boundaries[s]] - t0) / span;
      w.segment(n + 2 * n * (s - 1), n) = (1.0 - a) * x0 + a * target;
      w.segment(n + 2 * n * (s - 1) + n, n) = lam;
    }
    return w;
  }
  // Uncontrolled rollout with the control minimising H at lam = 0, and a
  // constant costate equal to grad M at its endpoint.
  const Vec zero = Vec::Zero(n);
  std::vector<Vec> xs{x0};
  Vec x = x0;
  for (std::size_t k = 0; k + 1 < g.times.size(); ++k) {
    const double t = g.times[k], h = g.times[k + 1] - g.times[k];
    auto f = [&](double tt, const Vec& xx) {
      return prob.base.dynamics(tt, xx, minimize_hamiltonian(prob, tt, xx, zero));
    };
    try {
      const Vec k1 = f(t, x);
      const Vec k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
      const Vec k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
      const Vec k4 = f(t + h, x + h * k3);
      x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    } catch (const SingularityError& e) {
      throw IntegrationDiverged(t, std::string("default guess rollout hit a singularity: ") + e.what());
    }
    if (!x.allFinite()) throw IntegrationDiverged(t, "default guess rollout produced a non-finite state");
    xs.push_back(x);
  }
  const Vec lam = prob.grad_M(xs.back());
  w.head(n) = lam;
  for (int s = 1; s < s_count; ++s) {
    w.segment(n + 2 * n * (s - 1), n) = xs[static_cast<std::size_t>(g.boundaries[s])];
    w.segment(n + 2 * n * (s - 1) + n, n) = lam;
  }
  return w;
}

TpbvpSolution build_solution(const TpbvpProblem& prob, const Grid& g, const Shooting& sh, const Vec& w, int n) {
  TpbvpSolution sol;
  std::vector<Vec> nodes;
  for (int s = 0; s < g.segments(); ++s) {
    std::vector<Vec> seg;
    integrate_segment(prob, g, s, sh.segment_start(w, s), &seg);
    // Later segments start from their own unknowns, so drop the duplicated end.
    if (s + 1 < g.segments()) seg.pop_back();
    nodes.insert(nodes.end(), seg.begin(), seg.end());
  }
  double stat = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double t = g.times[k];
    const Vec x = nodes[k].head(n), lam = nodes[k].tail(n);
    const Vec u = minimize_hamiltonian(prob, t, x, lam);
    stat = std::max(stat, hamiltonian_gradient_u(prob, t, x, lam, u).cwiseAbs().maxCoeff());
    sol.trajectory.times.push_back(t);
    sol.trajectory.states.push_back(x);
    sol.trajectory.controls.push_back(u);
    sol.costates.push_back(lam);
  }
  sol.residuals.max_stationarity = stat;
  sol.cost = evaluate_cost(prob.base, sol.trajectory);
  return sol;
}

}  // namespace

Vec TpbvpSolution::costate_at(double t) const {
  const auto& times = trajectory.times;
  if (t <= times.front()) return costates.front();
  if (t >= times.back()) return costates.back();
  auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - times.begin());
  const std::size_t lo = hi - 1;
  const double a = (t - times[lo]) / (times[hi] - times[lo]);
  return (1.0 - a) * costates[lo] + a * costates[hi];
}

MarchSchedule MarchSchedule::uniform(const Vec& target, const Vec& x0, int K) {
  if (K < 1) throw DomainError("march schedule needs K >= 1");
  if (target.size() != x0.size()) throw DomainError("march target and x0 differ in dimension");
  MarchSchedule s;
  s.K = K;
  for (int k = 1; k <= K; ++k) {
    if (k == K) s.waypoints.push_back(x0);
    else s.waypoints.push_back(target + (static_cast<double>(k) / K) * (x0 - target));
  }
  return s;
}

double hamiltonian(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u) {
  return prob.base.running_cost(t, x, u) + lam.dot(prob.base.dynamics(t, x, u));
}

Vec hamiltonian_gradient_u(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u) {
  return prob.L_u(t, x, u) + prob.f_u(t, x, u).transpose() * lam;
}

Vec minimize_hamiltonian_newton(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam,
                                const Vec& u_start, double tol, int max_iterations) {
  const int m = prob.base.control_dim;
  Vec u = u_start;
  Vec g = hamiltonian_gradient_u(prob, t, x, lam, u);
  for (int it = 0; it < max_iterations; ++it) {
    if (g.cwiseAbs().maxCoeff() < tol) return u;
    Mat hess(m, m);
    for (int j = 0; j < m; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(u[j]));
      Vec up = u;
      up[j] += h;
      hess.col(j) = (hamiltonian_gradient_u(prob, t, x, lam, up) - g) / h;
    }
    hess = 0.5 * (hess + hess.transpose());
    Eigen::LDLT<Mat> ldlt(hess);
    Vec step = ldlt.info() == Eigen::Success ? Vec(-ldlt.solve(g)) : Vec(-g);
    if (!step.allFinite() || step.dot(g) >= 0.0) step = -g;
    const double h0 = hamiltonian(prob, t, x, lam, u);
    double alpha = 1.0;
    Vec trial = u + step;
    for (int b = 0; b < 40; ++b) {
      trial = u + alpha * step;
      if (hamiltonian(prob, t, x, lam, trial) <= h0 + 1e-4 * alpha * step.dot(g)) break;
      alpha *= 0.5;
    }
    u = trial;
    g = hamiltonian_gradient_u(prob, t, x, lam, u);
  }
  const double r = g.cwiseAbs().maxCoeff();
  if (r < tol) return u;
  throw StationarityError(r, "Hamiltonian minimisation did not reach stationarity");
}

Vec minimize_hamiltonian(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam) {
  if (prob.hamiltonian_minimizer) return prob.hamiltonian_minimizer(t, x, lam);
  return minimize_hamiltonian_newton(prob, t, x, lam, Vec::Zero(prob.base.control_dim));
}

Vec costate_rhs(const TpbvpProblem& prob, double t, const Vec& x, const Vec& lam, const Vec& u) {
  return -(prob.L_x(t, x, u) + prob.f_x(t, x, u).transpose() * lam);
}

Vec state_costate_rhs(const TpbvpProblem& prob, double t, const Vec& z) {
  if (prob.state_costate_rhs) return prob.state_costate_rhs(t, z);
  const int n = prob.base.state_dim;
  const Vec x = z.head(n), lam = z.tail(n);
  const Vec u = minimize_hamiltonian(prob, t, x, lam);
  Vec dz(2 * n);
  dz << prob.base.dynamics(t, x, u), costate_rhs(prob, t, x, lam, u);
  return dz;
}

TpbvpSolution solve_tpbvp(const TpbvpProblem& prob, const Vec& x0, double t0, const TpbvpSolution* guess,
                          const SolverOptions& opts) {
  prob.base.validate();
  const int n = prob.base.state_dim;
  if (x0.size() != n) throw DomainError("x0 has wrong dimension");
  if (!(t0 >= 0.0 && t0 < prob.base.horizon)) throw DomainError("t0 must lie in [0, T)");
  if (!(opts.dt > 0.0) || opts.segments < 1 || opts.max_newton_iterations < 0)
    throw DomainError("invalid solver options");
  if (guess && (guess->start_time() > t0 + kTimeEps ||
                std::abs(guess->trajectory.end_time() - prob.base.horizon) > kTimeEps))
    throw DomainError("guess must cover [t0, T]");

  const Grid grid = make_grid(t0, prob.base.horizon, opts.dt, opts.segments);
  const Shooting sh{prob, grid, x0, n};
  Vec w = initial_unknowns(prob, grid, x0, guess, n);
  if (!w.allFinite()) throw IntegrationDiverged(t0, "initial guess is not finite");
  Vec f = sh.residual(w);  // IntegrationDiverged propagates for a bad initial guess

  int iterations = 0;
  Assessment a = assess(prob, grid, w, f, n, opts, sh);
  while (!a.converged && iterations < opts.max_newton_iterations) {
    const Mat jac = sh.jacobian(w, f, opts.fd_step);
    const Vec step = jac.partialPivLu().solve(-f);
    if (!step.allFinite()) break;
    const double phi = 0.5 * f.squaredNorm();
    double alpha = 1.0;
    bool accepted = false;
    for (int b = 0; b <= opts.max_backtracks; ++b, alpha *= 0.5) {
      const Vec trial = w + alpha * step;
      Vec f_trial;
      try {
        f_trial = sh.residual(trial);
      } catch (const IntegrationDiverged&) {
        continue;
      }
      if (!f_trial.allFinite()) continue;
      if (0.5 * f_trial.squaredNorm() <= (1.0 - 2.0 * opts.armijo_c * alpha) * phi) {
        w = trial;
        f = f_trial;
        accepted = true;
        break;
      }
    }
    ++iterations;
    if (!accepted) break;
    a = assess(prob, grid, w, f, n, opts, sh);
  }

  TpbvpSolution sol = build_solution(prob, grid, sh, w, n);
  sol.newton_iterations = iterations;
  sol.residuals.terminal_costate_gap = a.residuals.terminal_costate_gap;
  sol.residuals.mesh_residual = a.residuals.mesh_residual;
  const Vec grad = prob.grad_M(sol.trajectory.states.back());
  sol.converged = a.residuals.terminal_costate_gap < opts.tol_bc * (1.0 + grad.norm()) &&
                  a.residuals.mesh_residual < opts.tol_defect &&
                  sol.residuals.max_stationarity < opts.tol_stationarity;
  return sol;
}

TpbvpSolution space_march(const TpbvpProblem& prob, const Vec& x0, double t0, const MarchSchedule& schedule,
                          const SolverOptions& opts) {
  if (schedule.K < 1 || static_cast<int>(schedule.waypoints.size()) != schedule.K)
    throw DomainError("march schedule is inconsistent");
  if ((schedule.waypoints.back() - x0).cwiseAbs().maxCoeff() > 1e-12)
    throw DomainError("the last waypoint must equal x0");
  std::optional<TpbvpSolution> last_good;
  std::vector<MarchStep> log;
  for (int k = 0; k < schedule.K; ++k) {
    const TpbvpSolution* guess = last_good ? &*last_good : nullptr;
    TpbvpSolution sol;
    try {
      sol = solve_tpbvp(prob, schedule.waypoints[static_cast<std::size_t>(k)], t0, guess, opts);
    } catch (const IntegrationDiverged& e) {
      log.push_back({k + 1, false, 0});
      if (last_good) last_good->march_log = log;
      throw ContinuationFailed(k + 1, std::move(last_good),
                               "space marching diverged at step " + std::to_string(k + 1) + ": " + e.what());
    }
    log.push_back({k + 1, sol.converged, sol.newton_iterations});
    if (!sol.converged) {
      if (last_good) last_good->march_log = log;
      throw ContinuationFailed(k + 1, std::move(last_good),
                               "space marching failed to converge at step " + std::to_string(k + 1));
    }
    last_good = std::move(sol);
  }
  last_good->march_log = std::move(log);
  return std::move(*last_good);
}

}  // namespace ivps::pmp
