#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ivps/control_core.hpp"
#include "ivps/errors.hpp"
#include "ivps/lqr.hpp"
#include "ivps/quadrotor.hpp"

using namespace ivps;

namespace {

ControlProblem zero_dynamics() {
  ControlProblem p;
  p.state_dim = 2;
  p.control_dim = 1;
  p.horizon = 1.0;
  p.dynamics = [](double, const Vec& x, const Vec&) -> Vec { return Vec::Zero(x.size()); };
  p.running_cost = [](double, const Vec&, const Vec& u) { return u.squaredNorm(); };
  p.terminal_cost = [](const Vec& x) { return x.squaredNorm(); };
  return p;
}

Vec scalar(double v) { return Vec::Constant(1, v); }

FunctionController lqr_optimal(double T) {
  return FunctionController([T](double t, const Vec& x) { return scalar(lqr::optimal_closed_loop(t, x[0], T)); });
}

}  // namespace

TEST_CASE("zero dynamics keep the state") {
  const auto p = zero_dynamics();
  FunctionController c([](double t, const Vec&) { return scalar(std::sin(t)); });
  const auto traj = integrate_ivp(p, c, Vec{{1.0, 2.0}}, 0.0, 1.0, 0.1);
  CHECK(traj.size() == 11);
  for (const auto& x : traj.states) CHECK((x - Vec{{1.0, 2.0}}).norm() == 0.0);
  CHECK(traj.controls.back()[0] == doctest::Approx(std::sin(1.0)));
}

TEST_CASE("optimal LQR rollout lands on the analytic state") {
  const auto p = lqr::make_problem(1.0);
  const auto c = lqr_optimal(1.0);
  const auto traj = integrate_ivp(p, c, scalar(1.0), 0.0, 1.0, 1e-3);
  CHECK(std::abs(traj.states.back()[0] - 0.5) < 1e-6);
  CHECK(std::abs(evaluate_cost(p, traj) - 0.5) < 1e-6);
}

TEST_CASE("optimal LQR cost is x0^2 / (T^2 + 1)") {
  for (double T : {1.0, 2.0, 4.0, 8.0}) {
    const auto p = lqr::make_problem(T);
    const auto c = lqr_optimal(T);
    const double x0 = 1.3;
    const auto traj = integrate_ivp(p, c, scalar(x0), 0.0, T, 1e-3);
    CHECK(std::abs(evaluate_cost(p, traj) - x0 * x0 / (T * T + 1.0)) < 1e-6);
  }
}

TEST_CASE("quadrotor hover is an equilibrium") {
  const quad::QuadParams params;
  const auto cost = quad::LandingCost::standard(params);
  const auto p = quad::make_landing_problem(params, cost, 16.0);
  const Vec ud = cost.u_d;
  FunctionController c([ud](double, const Vec&) { return ud; });
  const auto traj = integrate_ivp(p, c, Vec::Zero(12), 0.0, 1.0, 0.01);
  for (const auto& x : traj.states) CHECK(x.norm() < 1e-9);
}

TEST_CASE("evaluate_cost quadrature") {
  auto p = zero_dynamics();
  Trajectory t;
  t.times = {0.0, 0.5, 1.0};
  t.states = {Vec::Zero(2), Vec::Zero(2), Vec::Zero(2)};
  t.controls = {scalar(2.0), scalar(2.0), scalar(2.0)};
  CHECK(evaluate_cost(p, t) == doctest::Approx(4.0).epsilon(1e-15));
  t.controls = {scalar(0.0), scalar(0.0), scalar(0.0)};
  CHECK(evaluate_cost(p, t) == 0.0);
  t.times = {0.0, 0.5, 0.9};
  CHECK_THROWS_AS(evaluate_cost(p, t), DomainError);
}

TEST_CASE("RK4 converges at fourth order on the LQR") {
  const double T = 2.0;
  const auto p = lqr::make_problem(T);
  FunctionController c([](double t, const Vec& x) { return scalar(-x[0] * (1.0 + t)); });
  // x' = -(1 + t) x  =>  x(T) = x0 exp(-(T + T^2 / 2))
  const double exact = std::exp(-(T + 0.5 * T * T));
  std::vector<double> err;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    const auto traj = integrate_ivp(p, c, scalar(1.0), 0.0, T, dt);
    err.push_back(std::abs(traj.states.back()[0] - exact));
  }
  for (std::size_t k = 1; k < err.size(); ++k) CHECK(std::log2(err[k - 1] / err[k]) >= 3.5);
}

TEST_CASE("integration rejects non-finite states") {
  const auto p = lqr::make_problem(1.0);
  FunctionController c([](double, const Vec& x) { return scalar(1e200 * x[0] * x[0]); });
  CHECK_THROWS_AS(integrate_ivp(p, c, scalar(1.0), 0.0, 1.0, 0.1), IntegrationDiverged);
}

TEST_CASE("sample_dataset counts") {
  const auto p = lqr::make_problem(16.0);
  const auto c = lqr_optimal(16.0);
  const auto traj = integrate_ivp(p, c, scalar(1.0), 0.0, 16.0, 0.01);
  CHECK(sample_dataset(traj, 0.2).size() == 81);
  CHECK(sample_dataset(traj, 0.01).size() == traj.size());
  const auto tail = integrate_ivp(p, c, scalar(1.0), 14.0, 16.0, 0.01);
  const auto pts = sample_dataset(tail, 1.0);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].t == doctest::Approx(14.0));
  CHECK(pts[2].t == doctest::Approx(16.0));
  CHECK_THROWS_AS(sample_dataset(traj, 0.015), AlignmentError);
}

TEST_CASE("dataset validation") {
  Dataset d;
  d.delta = 0.5;
  d.append({{0.0, scalar(1.0), scalar(0.0)}, {0.5, scalar(1.0), scalar(0.0)}}, 0, 0);
  CHECK_NOTHROW(d.validate());
  d.append({{0.5, scalar(2.0), scalar(0.0)}}, 0, 0);
  CHECK_THROWS_AS(d.validate(), DomainError);
}

TEST_CASE("temporal grid") {
  CHECK_THROWS_AS(TemporalGrid({0.0, 2.0, 1.0}), DomainError);
  CHECK_THROWS_AS(TemporalGrid({0.5, 1.0}), DomainError);
  const TemporalGrid g({0.0, 10.0, 14.0, 16.0});
  CHECK(g.intervals() == 3);
  CHECK(g.interval_of(0.0) == 0);
  CHECK(g.interval_of(10.0) == 1);
  CHECK(g.interval_of(16.0) == 2);
}

TEST_CASE("trajectory csv round trip") {
  const auto p = lqr::make_problem(1.0);
  const auto c = lqr_optimal(1.0);
  const auto traj = integrate_ivp(p, c, scalar(0.7), 0.0, 1.0, 0.1);
  std::stringstream ss;
  write_trajectory_csv(ss, traj);
  const auto back = read_trajectory_csv(ss, 1, 1);
  REQUIRE(back.size() == traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    CHECK(back.times[k] == traj.times[k]);
    CHECK(back.states[k][0] == traj.states[k][0]);
    CHECK(back.controls[k][0] == traj.controls[k][0]);
  }
}

TEST_CASE("control bounds clamp") {
  auto p = zero_dynamics();
  p.control_lower = scalar(-1.0);
  p.control_upper = scalar(1.0);
  CHECK(p.clamp(scalar(3.0))[0] == 1.0);
  CHECK(p.clamp(scalar(-3.0))[0] == -1.0);
}
