#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ivps/errors.hpp"
#include "ivps/lqr.hpp"
#include "ivps/metrics.hpp"

using namespace ivps;
using namespace ivps::metrics;

namespace {

std::vector<Vec> random_set(std::mt19937_64& rng, int n, int dim, double shift) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> out;
  for (int k = 0; k < n; ++k) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = g(rng) + shift;
    out.push_back(v);
  }
  return out;
}

double brute_mmd2(const std::vector<Vec>& X, const std::vector<Vec>& Y) {
  auto k = [](const Vec& a, const Vec& b) { return std::exp(-0.5 * (a - b).squaredNorm()); };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (const auto& a : X)
    for (const auto& b : X) xx += k(a, b);
  for (const auto& a : Y)
    for (const auto& b : Y) yy += k(a, b);
  for (const auto& a : X)
    for (const auto& b : Y) xy += k(a, b);
  const double nx = static_cast<double>(X.size()), ny = static_cast<double>(Y.size());
  return xx / (nx * nx) + yy / (ny * ny) - 2.0 * xy / (nx * ny);
}

std::vector<pmp::TpbvpSolution> lqr_refs(double T, const std::vector<double>& x0s) {
  const auto prob = lqr::make_tpbvp(T);
  std::vector<pmp::TpbvpSolution> refs;
  for (double x0 : x0s) refs.push_back(pmp::solve_tpbvp(prob, Vec::Constant(1, x0), 0.0));
  return refs;
}

}  // namespace

TEST_CASE("pointwise distance") {
  SnapshotPair p;
  p.training_states = {Vec::Zero(2)};
  p.reached_states = {Vec{{3.0, 4.0}}};
  CHECK(pointwise_distance(p) == doctest::Approx(5.0));
  p.reached_states = p.training_states;
  CHECK(pointwise_distance(p) == 0.0);
  p.reached_states.push_back(Vec::Zero(2));
  CHECK_THROWS_AS(pointwise_distance(p), AlignmentError);
}

TEST_CASE("MMD") {
  std::mt19937_64 rng(4);
  const auto X = random_set(rng, 30, 3, 0.0);
  CHECK(mmd_gaussian(X, X) == 0.0);
  const Vec a{{0.0, 1.0}}, b{{2.0, -1.0}};
  CHECK(mmd_gaussian({a}, {b}) == doctest::Approx(std::sqrt(2.0 - 2.0 * std::exp(-4.0))));
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> size(1, 50);
    const auto P = random_set(rng, size(rng), 4, 0.0);
    const auto Q = random_set(rng, size(rng), 4, 0.5);
    const double m = mmd_gaussian(P, Q);
    CHECK(std::abs(m * m - brute_mmd2(P, Q)) < 1e-12);
    CHECK(m == mmd_gaussian(Q, P));
    CHECK(m >= 0.0);
  }
}

TEST_CASE("ratio summary") {
  const auto s = summarize_ratios({4.0, 1.0, 3.0, 2.0});
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.max == 4.0);
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.p75 == doctest::Approx(3.25));
  CHECK(s.p90 == doctest::Approx(3.7));
  CHECK(s.diverged == 0);
  const double inf = std::numeric_limits<double>::infinity();
  const auto d = summarize_ratios({1.0, inf, 3.0});
  CHECK(d.diverged == 1);
  CHECK(d.mean == doctest::Approx(2.0));
  CHECK(std::isinf(d.max));
}

TEST_CASE("CDF") {
  const double inf = std::numeric_limits<double>::infinity();
  const auto cdf = ratio_cdf({1.3, 1.0, inf, 1.1});
  REQUIRE(!cdf.empty());
  for (std::size_t k = 1; k < cdf.size(); ++k) {
    CHECK(cdf[k].first >= cdf[k - 1].first);
    CHECK(cdf[k].second >= cdf[k - 1].second);
  }
  CHECK(cdf.back().second == 1.0);
  CHECK(std::isinf(cdf.back().first));
  CHECK(cdf[cdf.size() - 2].second == doctest::Approx(0.75));
}

TEST_CASE("optimal controller has unit cost ratios") {
  const double T = 3.0;
  const auto problem = lqr::make_problem(T);
  const auto refs = lqr_refs(T, {-1.5, 0.3, 1.0, 2.2});
  const auto ctrl = lqr::LqrController::optimal(3, 0.01);
  const auto table = cost_ratio_table(problem, ctrl, refs, 0.01);
  for (double r : table.ratios) CHECK(std::abs(r - 1.0) < 1e-3);
  CHECK(std::abs(table.summary.mean - 1.0) < 1e-3);

  const auto zero = disturbance_eval(problem, ctrl, refs, 0.0, 3, 0.01, 7);
  REQUIRE(zero.ratios.size() == 12u);
  for (std::size_t k = 0; k < zero.ratios.size(); ++k) CHECK(zero.ratios[k] == table.ratios[k / 3]);

  const auto n1 = disturbance_eval(problem, ctrl, refs, 0.1, 3, 0.01, 7, 2);
  const auto n2 = disturbance_eval(problem, ctrl, refs, 0.1, 3, 0.01, 7, 1);
  CHECK(n1.ratios == n2.ratios);
  CHECK(n1.ratios != zero.ratios);

  const auto replay = open_loop_time_disturbance(problem, refs, 0.0, 2, 0.01, 3);
  for (double r : replay.ratios) CHECK(std::abs(r - 1.0) < 1e-3);
}

TEST_CASE("mismatch of a controller against its own rollouts is zero") {
  const double T = 2.0;
  const auto problem = lqr::make_problem(T);
  const auto ctrl = lqr::LqrController::optimal(2, 0.01);
  std::vector<Vec> starts{Vec::Constant(1, 1.0), Vec::Constant(1, -0.5), Vec::Constant(1, 2.0)};
  Dataset d;
  d.delta = 0.2;
  for (std::size_t k = 0; k < starts.size(); ++k)
    d.append(sample_dataset(integrate_ivp(problem, ctrl, starts[k], 0.0, T, 0.01), 0.2), static_cast<int>(k),
             static_cast<int>(k));
  const auto curve = mismatch_curve(problem, ctrl, d, starts, 0.01);
  CHECK(curve.size() == 11u);
  for (const auto& p : curve) {
    CHECK(p.pointwise < 1e-12);
    CHECK(p.mmd < 1e-6);
  }
}

TEST_CASE("knot discontinuities") {
  std::vector<MismatchPoint> curve;
  for (int k = 0; k <= 20; ++k) {
    const double t = 0.5 * k;
    curve.push_back({t, 0.01 * k + (t >= 5.0 ? 1.0 : 0.0) + (t >= 8.0 ? -0.7 : 0.0), 0.0});
  }
  const auto jumps = knot_discontinuities(curve, {5.0, 8.0});
  REQUIRE(jumps.size() == 2u);
  for (const auto& j : jumps) CHECK(j.discontinuous);
  CHECK(jumps[0].jump == doctest::Approx(1.01));
  CHECK(jumps[0].median_off_knot == doctest::Approx(0.01));
  const auto none = knot_discontinuities(curve, {3.0});
  REQUIRE(none.size() == 1u);
  CHECK(none[0].jump <= none[0].median_off_knot + 1e-12);
}
