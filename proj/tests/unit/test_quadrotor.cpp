#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ivps/errors.hpp"
#include "ivps/quadrotor.hpp"

using namespace ivps;
using namespace ivps::quad;

namespace {

Mat3 rx(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 ry(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rz(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

Vec random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec x(12);
  for (int k = 0; k < 12; ++k) x[k] = u(rng);
  return x;
}

}  // namespace

TEST_CASE("hover and free fall") {
  const QuadParams p;
  const Vec hover = Vec{{p.m * p.g, 0.0, 0.0, 0.0}};
  CHECK(quad_dynamics(Vec::Zero(12), hover, p).norm() == 0.0);
  const Vec fall = quad_dynamics(Vec::Zero(12), Vec::Zero(4), p);
  CHECK(fall[5] == doctest::Approx(-9.81));
  CHECK(fall.head<5>().norm() == 0.0);
}

TEST_CASE("zero attitude frame identities") {
  const QuadParams p;
  QuadState s;
  s.v_b = Vec3(0.3, -0.2, 0.5);
  s.w_b = Vec3(0.1, 0.2, -0.4);
  const Vec u = Vec{{5.0, 0.0, 0.0, 0.0}};
  const auto d = quad_dynamics(s.pack(), u, p);
  CHECK((d.head<3>() - s.v_b).norm() < 1e-15);
  CHECK((d.segment<3>(6) - s.w_b).norm() < 1e-15);
  const Vec3 vdot = -s.w_b.cross(s.v_b) - Vec3(0, 0, p.g) + Vec3(0, 0, 5.0 / p.m);
  CHECK((d.segment<3>(3) - vdot).norm() < 1e-14);
}

TEST_CASE("rotation matrix") {
  CHECK((rotation_matrix(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  CHECK((attitude_kinematics(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  const Vec3 ex = rotation_matrix(Vec3(0, 0, std::numbers::pi / 2)) * Vec3::UnitX();
  CHECK((ex - Vec3(0, -1, 0)).norm() < 1e-15);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> a(-1.5, 1.5);
  for (int k = 0; k < 50; ++k) {
    const Vec3 eta(a(rng), a(rng), a(rng));
    const Mat3 r = rotation_matrix(eta);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-12);
    const Mat3 composed = (rz(eta[2]) * ry(eta[1]) * rx(eta[0])).transpose();
    CHECK((r - composed).norm() < 1e-12);
  }
}

TEST_CASE("pitch singularity is rejected") {
  QuadState s;
  s.eta[1] = std::numbers::pi / 2;
  CHECK_THROWS_AS(quad_dynamics(s.pack(), Vec::Zero(4), QuadParams{}), SingularityError);
}

TEST_CASE("state jacobian matches finite differences") {
  const QuadParams p;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_state(rng);
    const Vec u = random_state(rng).head(4) + Vec{{p.m * p.g, 0, 0, 0}};
    const Mat jac = quad_state_jacobian(x, u, p);
    Mat fd(12, 12);
    for (int k = 0; k < 12; ++k) {
      const double h = 1e-6;
      Vec xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      fd.col(k) = (quad_dynamics(xp, u, p) - quad_dynamics(xm, u, p)) / (2 * h);
    }
    CHECK((jac - fd).norm() / (1.0 + fd.norm()) < 1e-5);
    Mat fdu(12, 4);
    for (int k = 0; k < 4; ++k) {
      Vec up = u, um = u;
      up[k] += 1e-6;
      um[k] -= 1e-6;
      fdu.col(k) = (quad_dynamics(x, up, p) - quad_dynamics(x, um, p)) / 2e-6;
    }
    CHECK((quad_control_jacobian(p) - fdu).norm() < 1e-6);
  }
}

TEST_CASE("landing costs") {
  const QuadParams p;
  const auto c = LandingCost::standard(p);
  CHECK(landing_costs(Vec::Zero(12), c.u_d, c).first == 0.0);
  CHECK(landing_costs(Vec::Zero(12), c.u_d, c).second == 0.0);
  Vec x = Vec::Zero(12);
  x[0] = 1.0;
  CHECK(landing_costs(x, c.u_d, c).second == doctest::Approx(5.0));
  x.setZero();
  x[9] = 1.0;
  CHECK(landing_costs(x, c.u_d, c).second == doctest::Approx(50.0));
  CHECK(landing_costs(x, c.u_d + Vec{{1.0, 0, 0, 2.0}}, c).first == doctest::Approx(5.0));
}

TEST_CASE("rotor mixing") {
  const QuadParams p;
  const auto f = rotor_mixing(Vec{{4.0 * 1.7, 0, 0, 0}}, p);
  for (int k = 0; k < 4; ++k) CHECK(f[k] == doctest::Approx(1.7));
  const auto e = mixing_matrix(p);
  CHECK(e(3, 0) == p.c);
  CHECK(e(3, 1) == -p.c);
  CHECK(e(3, 2) == p.c);
  CHECK(e(3, 3) == -p.c);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Vec u = random_state(rng).head(4);
    CHECK((e * rotor_mixing(u, p) - u).norm() < 1e-12);
  }
}

TEST_CASE("initial state sampling") {
  InitialBox fixed;
  fixed.lower.setConstant(0.5);
  fixed.upper.setConstant(0.5);
  std::mt19937_64 rng(1);
  CHECK((sample_initial(fixed, rng).pack() - Vec::Constant(12, 0.5)).norm() == 0.0);

  const auto box = InitialBox::desk();
  const int n = 10000;
  Vec sum = Vec::Zero(12);
  for (int k = 0; k < n; ++k) {
    const Vec x = sample_initial(box, rng).pack();
    for (int i = 0; i < 12; ++i) {
      CHECK_MESSAGE(x[i] >= box.lower[i], i);
      CHECK_MESSAGE(x[i] <= box.upper[i], i);
    }
    sum += x;
  }
  for (int i = 0; i < 12; ++i) {
    const double width = box.upper[i] - box.lower[i];
    const double se = width / std::sqrt(12.0 * n);
    CHECK(std::abs(sum[i] / n - 0.5 * (box.lower[i] + box.upper[i])) <= 3.0 * se + 1e-15);
  }
  CHECK(box.upper[0] == doctest::Approx(8.0));
  CHECK(box.lower[2] == doctest::Approx(4.0));
}

TEST_CASE("state packing round trip") {
  std::mt19937_64 rng(6);
  const Vec x = random_state(rng);
  CHECK((QuadState::unpack(x).pack() - x).norm() == 0.0);
}
