#include "ivps/control_core.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "ivps/errors.hpp"

namespace ivps {

namespace {

bool all_finite(const Vec& v) { return v.allFinite(); }

std::string fmt_time(double t) {
  std::ostringstream os;
  os << std::setprecision(17) << t;
  return os.str();
}

// Number of full steps of size dt in span, and whether a short step remains.
std::pair<long, bool> step_count(double span, double dt) {
  const double ratio = span / dt;
  long full = static_cast<long>(std::floor(ratio + 1e-9));
  const bool tail = span - static_cast<double>(full) * dt > kTimeEps * std::max(1.0, span);
  return {full, tail};
}

}  // namespace

void ControlProblem::validate() const {
  if (state_dim <= 0 || control_dim <= 0) throw DomainError("problem dimensions must be positive");
  if (!(horizon > 0.0)) throw DomainError("horizon must be positive");
  if (!dynamics || !running_cost || !terminal_cost)
    throw DomainError("dynamics, running cost and terminal cost are required");
  if (control_lower && control_lower->size() != control_dim)
    throw DomainError("control_lower has wrong dimension");
  if (control_upper && control_upper->size() != control_dim)
    throw DomainError("control_upper has wrong dimension");
  if (control_lower && control_upper && ((*control_lower).array() > (*control_upper).array()).any())
    throw DomainError("control_lower exceeds control_upper");
}

Vec ControlProblem::clamp(Vec u) const {
  if (control_lower) u = u.cwiseMax(*control_lower);
  if (control_upper) u = u.cwiseMin(*control_upper);
  return u;
}

void Trajectory::validate(int state_dim, int control_dim) const {
  if (times.size() < 2) throw DomainError("trajectory needs at least two nodes");
  if (states.size() != times.size() || controls.size() != times.size())
    throw DomainError("trajectory arrays have different lengths");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw DomainError("trajectory times must increase strictly");
  for (const auto& x : states)
    if (x.size() != state_dim) throw DomainError("trajectory state has wrong dimension");
  for (const auto& u : controls)
    if (u.size() != control_dim) throw DomainError("trajectory control has wrong dimension");
}

namespace {

template <class Get>
Vec interpolate(const std::vector<double>& times, double t, Get get) {
  if (t <= times.front()) return get(0);
  if (t >= times.back()) return get(times.size() - 1);
  auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - times.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  return (1.0 - w) * get(lo) + w * get(hi);
}

}  // namespace

Vec Trajectory::state_at(double t) const {
  return interpolate(times, t, [this](std::size_t k) -> Vec { return states[k]; });
}

Vec Trajectory::control_at(double t) const {
  return interpolate(times, t, [this](std::size_t k) -> Vec { return controls[k]; });
}

void Dataset::append(std::vector<DataPoint> pts, int trajectory_id, int origin) {
  for (auto& p : pts) {
    points.push_back(std::move(p));
    trajectory_ids.push_back(trajectory_id);
    origins.push_back(origin);
  }
}

void Dataset::validate() const {
  if (!(delta > 0.0)) throw DomainError("dataset delta must be positive");
  if (trajectory_ids.size() != points.size() || origins.size() != points.size())
    throw DomainError("dataset label arrays have different lengths");
  std::set<std::pair<int, long>> seen;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double steps = points[k].t / delta;
    const long idx = std::lround(steps);
    if (std::abs(steps - static_cast<double>(idx)) > 1e-6)
      throw AlignmentError("dataset time " + fmt_time(points[k].t) + " is not a multiple of delta");
    if (!seen.emplace(trajectory_ids[k], idx).second)
      throw DomainError("duplicate (trajectory_id, t) in dataset");
  }
}

TemporalGrid::TemporalGrid(std::vector<double> k) : knots(std::move(k)) {
  if (knots.size() < 2) throw DomainError("temporal grid needs at least two knots");
  if (knots.front() != 0.0) throw DomainError("temporal grid must start at 0");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1])) throw DomainError("temporal grid knots must increase strictly");
}

int TemporalGrid::interval_of(double t) const {
  const int last = intervals() - 1;
  for (int i = 0; i < last; ++i)
    if (t < knots[i + 1] - kTimeEps) return i;
  return last;
}

TemporalGrid TemporalGrid::uniform(double horizon, int intervals) {
  if (intervals < 1) throw DomainError("uniform grid needs at least one interval");
  std::vector<double> k(intervals + 1);
  for (int i = 0; i <= intervals; ++i) k[i] = horizon * i / intervals;
  k.back() = horizon;
  return TemporalGrid(std::move(k));
}

Trajectory integrate_ivp(const ControlProblem& problem, const ClosedLoopController& controller,
                         const Vec& x0, double t0, double t1, double dt) {
  if (!(dt > 0.0)) throw DomainError("integration step must be positive");
  if (t0 < -kTimeEps || !(t1 > t0) || t1 > problem.horizon + kTimeEps)
    throw DomainError("integration interval must satisfy 0 <= t0 < t1 <= T");
  if (x0.size() != problem.state_dim) throw DomainError("initial state has wrong dimension");
  if (!all_finite(x0)) throw IntegrationDiverged(t0, "initial state is not finite");

  const auto [full, tail] = step_count(t1 - t0, dt);
  const long steps = full + (tail ? 1 : 0);

  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.controls.reserve(steps + 1);

  auto control = [&](double t, const Vec& x, bool before) {
    Vec u = before ? controller.evaluate_before(t, x) : controller.evaluate(t, x);
    if (u.size() != problem.control_dim) throw DomainError("controller output has wrong dimension");
    return problem.clamp(std::move(u));
  };
  auto rhs = [&](double t, const Vec& x, bool before) -> Vec {
    return problem.dynamics(t, x, control(t, x, before));
  };

  Vec x = x0;
  double t = t0;
  traj.times.push_back(t0);
  traj.states.push_back(x);
  for (long k = 0; k < steps; ++k) {
    const double t_next = (k + 1 == steps) ? t1 : t0 + static_cast<double>(k + 1) * dt;
    const double h = t_next - t;
    Vec u = control(t, x, false);
    Vec x_next;
    try {
      const Vec k1 = problem.dynamics(t, x, u);
      const Vec k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1, false);
      const Vec k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2, false);
      const Vec k4 = rhs(t_next, x + h * k3, true);
      x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    } catch (const SingularityError& e) {
      throw IntegrationDiverged(t, std::string("dynamics singular after t = ") + fmt_time(t) + ": " + e.what());
    }
    if (!all_finite(x_next))
      throw IntegrationDiverged(t, "state became non-finite after t = " + fmt_time(t));
    traj.controls.push_back(std::move(u));
    x = std::move(x_next);
    t = t_next;
    traj.times.push_back(t);
    traj.states.push_back(x);
  }
  // Terminal node: evaluate the controller at T so the arrays stay rectangular.
  traj.controls.push_back(control(t, x, true));
  return traj;
}

double evaluate_cost(const ControlProblem& problem, const Trajectory& traj) {
  if (traj.size() < 2) throw DomainError("cost needs a trajectory with at least two nodes");
  if (std::abs(traj.end_time() - problem.horizon) > kTimeEps * std::max(1.0, problem.horizon))
    throw DomainError("trajectory ends at " + fmt_time(traj.end_time()) + " instead of T = " +
                      fmt_time(problem.horizon));
  double running = 0.0;
  double prev = problem.running_cost(traj.times[0], traj.states[0], traj.controls[0]);
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const double cur = problem.running_cost(traj.times[k], traj.states[k], traj.controls[k]);
    running += 0.5 * (prev + cur) * (traj.times[k] - traj.times[k - 1]);
    prev = cur;
  }
  return running + problem.terminal_cost(traj.states.back());
}

std::vector<DataPoint> sample_dataset(const Trajectory& traj, double delta) {
  if (!(delta > 0.0)) throw DomainError("delta must be positive");
  if (traj.size() < 2) throw DomainError("trajectory needs at least two nodes");
  const double dt = traj.times[1] - traj.times[0];
  const double ratio = delta / dt;
  const long stride = std::lround(ratio);
  if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-6)
    throw AlignmentError("delta " + fmt_time(delta) + " is not a multiple of the trajectory step " +
                         fmt_time(dt));
  std::vector<DataPoint> out;
  const double t0 = traj.start_time();
  for (std::size_t k = 0; k < traj.size(); k += static_cast<std::size_t>(stride)) {
    const double expected = t0 + static_cast<double>(k / stride) * delta;
    if (std::abs(traj.times[k] - expected) > 1e-6 * std::max(1.0, std::abs(expected)))
      throw AlignmentError("trajectory grid is not uniform near t = " + fmt_time(traj.times[k]));
    out.push_back({expected, traj.states[k], traj.controls[k]});
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  if (traj.size() == 0) throw DomainError("empty trajectory");
  const auto n = traj.states.front().size();
  const auto m = traj.controls.front().size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i;
  for (Eigen::Index i = 0; i < m; ++i) os << ",u" << i;
  os << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << traj.times[k];
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << traj.states[k][i];
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << traj.controls[k][i];
    os << '\n';
  }
}

Trajectory read_trajectory_csv(std::istream& is, int state_dim, int control_dim) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("trajectory CSV is empty");
  Trajectory traj;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (static_cast<int>(values.size()) != 1 + state_dim + control_dim)
      throw DomainError("trajectory CSV row has the wrong number of columns");
    traj.times.push_back(values[0]);
    traj.states.push_back(Eigen::Map<const Vec>(values.data() + 1, state_dim));
    traj.controls.push_back(Eigen::Map<const Vec>(values.data() + 1 + state_dim, control_dim));
  }
  traj.validate(state_dim, control_dim);
  return traj;
}

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  os << "trajectory_id,origin,t";
  if (!data.empty()) {
    for (Eigen::Index i = 0; i < data.points[0].x.size(); ++i) os << ",x" << i;
    for (Eigen::Index i = 0; i < data.points[0].u.size(); ++i) os << ",u" << i;
  }
  os << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& p = data.points[k];
    os << data.trajectory_ids[k] << ',' << data.origins[k] << ',' << p.t;
    for (Eigen::Index i = 0; i < p.x.size(); ++i) os << ',' << p.x[i];
    for (Eigen::Index i = 0; i < p.u.size(); ++i) os << ',' << p.u[i];
    os << '\n';
  }
}

}  // namespace ivps
