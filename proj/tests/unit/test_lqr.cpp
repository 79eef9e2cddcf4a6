#include <doctest.h>

#include <cmath>

#include "../oracles.hpp"
#include "ivps/errors.hpp"
#include "ivps/lqr.hpp"

using namespace ivps;
using namespace ivps::lqr;

namespace {

LqrSpec small_spec(int T, int N, double eps) {
  LqrSpec s;
  s.T = T;
  s.N = N;
  s.epsilon = eps;
  s.dt = 0.01;
  return s;
}

std::vector<double> zbars(const LqrData& d) {
  std::vector<double> z;
  for (const auto& it : d.by_iteration) z.push_back(oracle::mean_z(it));
  return z;
}

}  // namespace

TEST_CASE("optimal closed loop") {
  CHECK(optimal_closed_loop(0.0, 1.0, 1.0) == doctest::Approx(-0.5));
  CHECK(optimal_closed_loop(5.0, 2.0, 5.0) == doctest::Approx(-10.0));
  CHECK(optimal_closed_loop(2.0, 0.0, 5.0) == 0.0);
  CHECK(optimal_cost(2.0, 3.0) == doctest::Approx(0.4));
}

TEST_CASE("noisy oracle") {
  auto spec = small_spec(4, 1, 0.0);
  Rng rng(3);
  const auto p = noisy_open_loop(1.0, 2.0, spec, rng);
  CHECK(p.u_hat(2.0) == doctest::Approx(-4.0 * 2.0 / 13.0));
  CHECK(p.x_hat(1.0) == doctest::Approx(2.0));
  CHECK(p.x_hat(4.0) == doctest::Approx(2.0 / 13.0));

  spec.epsilon = 0.3;
  Rng a(11), b(11);
  CHECK(noisy_open_loop(0.0, 1.0, spec, a).z == noisy_open_loop(0.0, 1.0, spec, b).z);
  CHECK_THROWS_AS(noisy_open_loop(4.0, 1.0, spec, a), DomainError);
}

TEST_CASE("noisy oracle second moment") {
  const auto spec = small_spec(4, 1, 0.3);
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double t = 3.0, T = spec.T;
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x0 = normal(rng);
    const double v = std::pow(noisy_open_loop(0.0, x0, spec, rng).x_hat(t), 2);
    sum += v;
    sum2 += v * v;
  }
  const double m = sum / n;
  const double se = std::sqrt((sum2 / n - m * m) / n);
  const double expected = std::pow(oracle::s(t, T) / (T * T + 1.0), 2) + spec.epsilon * spec.epsilon * t * t;
  CHECK(std::abs(m - expected) < 3.0 * se);
}

TEST_CASE("slice fits") {
  CHECK(fit_slice_model1(1.0, 2.0, {0.5}, {0.25}) == doctest::Approx(0.25 + 2.0 * 0.5 / 3.0));
  const auto two = fit_slice_model2({0.0, 1.0}, {1.0, 3.0}, false);
  CHECK(two.a == doctest::Approx(2.0));
  CHECK(two.b == doctest::Approx(1.0));
  std::vector<double> x{-1.3, 0.2, 0.7, 2.5}, u;
  for (double v : x) u.push_back(-0.75 * v + 0.125);
  const auto exact = fit_slice_model2(x, u, false);
  CHECK(std::abs(exact.a + 0.75) < 1e-12);
  CHECK(std::abs(exact.b - 0.125) < 1e-12);
  CHECK_THROWS_AS(fit_slice_model2({1.0, 1.0}, {0.0, 1.0}, false), SingularFit);
  CHECK(fit_slice_model2({1.0, 1.0}, {0.0, 1.0}, true).ridge);
}

TEST_CASE("vanilla Model 1 matches its closed form") {
  const auto spec = small_spec(5, 20, 0.1);
  const auto run = run_vanilla(spec, Model::kModel1, Rng(42));
  CHECK(run.oracle_calls == spec.N * spec.T);
  const double zbar = oracle::mean_z(run.data.by_iteration.at(0));
  for (long k = 0; k < spec.nodes(); k += 7) {
    const double t = spec.node_time(k);
    for (double x : {-1.5, 0.0, 0.8})
      CHECK(std::abs(run.controller->control(t, x) - oracle::vanilla_control(t, x, spec.T, spec.epsilon, zbar)) <
            1e-10);
  }
}

TEST_CASE("IVP-enhanced Model 1 matches its closed form") {
  const auto spec = small_spec(5, 20, 0.1);
  const auto run = run_ivp_enhanced(spec, Model::kModel1, Rng(7));
  CHECK(run.oracle_calls == spec.N * spec.T);
  REQUIRE(run.data.by_iteration.size() == 5u);
  const auto zb = zbars(run.data);
  for (long k = 0; k < spec.nodes(); ++k) {
    const double t = spec.node_time(k);
    CHECK(std::abs(run.controller->control(t, 0.6) - oracle::ivp_control(t, 0.6, spec.T, spec.epsilon, zb)) < 1e-10);
  }
  for (int i = 0; i < spec.T; ++i)
    for (std::size_t j = 0; j < run.initial_states.size(); j += 5)
      CHECK(std::abs(run.reached[i][j] - oracle::ivp_reached(i, run.initial_states[j], spec.T, spec.epsilon, zb)) <
            1e-8);
}

TEST_CASE("noise-free pipelines recover the optimal controller") {
  const auto spec = small_spec(4, 10, 0.0);
  for (auto method : {Method::kVanilla, Method::kIvpEnhanced}) {
    const auto m1 = run_method(spec, method, Model::kModel1, Rng(1));
    const auto m2 = run_method(spec, method, Model::kModel2, Rng(1));
    for (long k = 0; k < spec.nodes(); k += 13) {
      const double t = spec.node_time(k);
      CHECK(std::abs(m1.controller->control(t, 1.1) - optimal_closed_loop(t, 1.1, spec.T)) < 1e-12);
      CHECK(std::abs(m2.controller->a_at(t) + spec.T / oracle::s(t, spec.T)) < 1e-10);
      CHECK(std::abs(m2.controller->b_at(t)) < 1e-10);
    }
  }
}

TEST_CASE("single interval IVP-enhanced equals vanilla") {
  const auto spec = small_spec(1, 30, 0.2);
  const auto v = run_vanilla(spec, Model::kModel2, Rng(9));
  const auto a = run_ivp_enhanced(spec, Model::kModel2, Rng(9));
  for (long k = 0; k < spec.nodes(); k += 10)
    CHECK(v.controller->control(spec.node_time(k), 0.4) == a.controller->control(spec.node_time(k), 0.4));
}

TEST_CASE("predictions") {
  const auto r = theorem1_predictions(small_spec(10, 50, 0.1));
  CHECK(r.vanilla_perf_gap == doctest::Approx(2.02e-3).epsilon(1e-12));
  CHECK(r.ivp_perf_gap_bound == doctest::Approx(6e-4).epsilon(1e-12));
  CHECK(r.vanilla_moment_gap(0.0) == 0.0);
  CHECK(r.vanilla_moment_gap(10.0) == doctest::Approx((1.0 - 1.0 / 500.0) * 0.01 * 100.0));
  CHECK(r.ivp_moment_gap_bound == doctest::Approx(0.01));
  CHECK(r.ivp_perf_gap_exact <= r.ivp_perf_gap_bound);
}

TEST_CASE("optimal controller has zero performance gap") {
  const auto spec = small_spec(3, 5, 0.1);
  const ControllerFactory optimal = [&](Rng) {
    return std::make_shared<const LqrController>(LqrController::optimal(spec.T, spec.dt));
  };
  const auto est = monte_carlo_perf_gap(optimal, spec, 4, 10, 0, 1);
  CHECK(std::abs(est.mean) < 1e-6);
}

TEST_CASE("rollout of the optimal controller") {
  const auto c = LqrController::optimal(4, 0.01);
  const auto r = rollout(c, 2.0, 0.0, 4.0, 0.01);
  CHECK(std::abs(r.x.back() - 2.0 / 17.0) < 1e-8);
  CHECK(std::abs(r.cost - 4.0 / 17.0) < 1e-6);
}

TEST_CASE("Model 2 vanilla gap exceeds IVP-enhanced") {
  const auto spec = small_spec(8, 50, 0.1);
  auto gap = [&](Method m) {
    const ControllerFactory f = [&](Rng rng) { return run_method(spec, m, Model::kModel2, rng).controller; };
    return monte_carlo_perf_gap(f, spec, 10, 50, 100, 1);
  };
  const auto v = gap(Method::kVanilla);
  const auto a = gap(Method::kIvpEnhanced);
  CHECK(v.mean - a.mean > 3.0 * std::hypot(v.std_error, a.std_error));
}
