#include "ivps/quadrotor.hpp"

#include <cmath>
#include <numbers>

#include "ivps/errors.hpp"

namespace ivps::quad {

namespace {

Mat3 skew(const Vec3& a) {
  Mat3 s;
  s << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
  return s;
}

void check_pitch(double theta) {
  if (std::abs(std::cos(theta)) <= std::sin(kPitchGuard))
    throw SingularityError("attitude kinematics are singular at pitch = +-pi/2");
}

// Derivatives of R with respect to roll, pitch and yaw.
std::array<Mat3, 3> rotation_derivatives(const Vec3& eta) {
  const double sa = std::sin(eta[0]), ca = std::cos(eta[0]);
  const double sb = std::sin(eta[1]), cb = std::cos(eta[1]);
  const double sc = std::sin(eta[2]), cc = std::cos(eta[2]);
  Mat3 d_roll, d_pitch, d_yaw;
  d_roll << 0.0, 0.0, 0.0,
      sb * cc * ca + sc * sa, sb * sc * ca - cc * sa, cb * ca,
      -sb * cc * sa + sc * ca, -sb * sc * sa - cc * ca, -cb * sa;
  d_pitch << -sb * cc, -sb * sc, -cb,
      cb * cc * sa, cb * sc * sa, -sb * sa,
      cb * cc * ca, cb * sc * ca, -sb * ca;
  d_yaw << -cb * sc, cb * cc, 0.0,
      -sb * sc * sa - cc * ca, sb * cc * sa - sc * ca, 0.0,
      -sb * sc * ca + cc * sa, sb * cc * ca + sc * sa, 0.0;
  return {d_roll, d_pitch, d_yaw};
}

}  // namespace

void QuadParams::validate() const {
  if (!(m > 0.0)) throw DomainError("quadrotor mass must be positive");
  if (!(J.array() > 0.0).all()) throw DomainError("quadrotor inertia must be positive");
  if (!(g > 0.0)) throw DomainError("gravity must be positive");
}

Vec QuadState::pack() const {
  Vec x(kStateDim);
  x << p, v_b, eta, w_b;
  return x;
}

QuadState QuadState::unpack(const Vec& x) {
  if (x.size() != kStateDim) throw DomainError("quadrotor state must have 12 entries");
  return {x.segment<3>(0), x.segment<3>(3), x.segment<3>(6), x.segment<3>(9)};
}

Vec QuadControl::pack() const {
  Vec u(kControlDim);
  u << thrust, tau;
  return u;
}

QuadControl QuadControl::unpack(const Vec& u) {
  if (u.size() != kControlDim) throw DomainError("quadrotor control must have 4 entries");
  return {u[0], u.segment<3>(1)};
}

LandingCost LandingCost::standard(const QuadParams& params) {
  LandingCost c;
  c.q_u = Eigen::Vector4d::Ones();
  c.u_d << params.m * params.g, 0.0, 0.0, 0.0;
  c.q_f << Vec3::Constant(5.0), Vec3::Constant(10.0), Vec3::Constant(25.0), Vec3::Constant(50.0);
  return c;
}

void InitialBox::validate() const {
  if ((lower.array() > upper.array()).any()) throw DomainError("initial box has lower > upper");
}

InitialBox InitialBox::paper() { return scaled(1.0, 1.0); }

InitialBox InitialBox::scaled(double position_scale, double angle_scale) {
  constexpr double pi = std::numbers::pi;
  InitialBox b;
  b.lower << -40, -40, 20, -1, -1, -1, -pi / 4, -pi / 4, -pi, 0, 0, 0;
  b.upper << 40, 40, 40, 1, 1, 1, pi / 4, pi / 4, pi, 0, 0, 0;
  b.lower.head<3>() *= position_scale;
  b.upper.head<3>() *= position_scale;
  b.lower.segment<3>(6) *= angle_scale;
  b.upper.segment<3>(6) *= angle_scale;
  return b;
}

Mat3 rotation_matrix(const Vec3& eta) {
  const double sa = std::sin(eta[0]), ca = std::cos(eta[0]);
  const double sb = std::sin(eta[1]), cb = std::cos(eta[1]);
  const double sc = std::sin(eta[2]), cc = std::cos(eta[2]);
  Mat3 r;
  r << cb * cc, cb * sc, -sb,
      sb * cc * sa - sc * ca, sb * sc * sa + cc * ca, cb * sa,
      sb * cc * ca + sc * sa, sb * sc * ca - cc * sa, cb * ca;
  return r;
}

Mat3 attitude_kinematics(const Vec3& eta) {
  check_pitch(eta[1]);
  const double sa = std::sin(eta[0]), ca = std::cos(eta[0]);
  const double tb = std::tan(eta[1]), cb = std::cos(eta[1]);
  Mat3 k;
  k << 1.0, sa * tb, ca * tb,
      0.0, ca, -sa,
      0.0, sa / cb, ca / cb;
  return k;
}

namespace {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

template <class X, class U>
Vec12 dynamics_fixed(const X& x, const U& u, const QuadParams& params) {
  const Vec3 v = x.template segment<3>(3);
  const Vec3 eta = x.template segment<3>(6);
  const Vec3 w = x.template segment<3>(9);
  const Mat3 r = rotation_matrix(eta);
  const Mat3 k = attitude_kinematics(eta);
  const Vec3 jw = params.J.cwiseProduct(w);

  Vec12 dx;
  dx.segment<3>(0) = r.transpose() * v;
  dx.segment<3>(3) = -w.cross(v) - params.g * r.col(2);
  dx[5] += u[0] / params.m;
  dx.segment<3>(6) = k * w;
  dx.segment<3>(9) = (-w.cross(jw) + Vec3(u[1], u[2], u[3])).cwiseQuotient(params.J);
  return dx;
}

template <class X>
Mat12 jacobian_fixed(const X& x, const QuadParams& params);

}  // namespace

Vec quad_dynamics(const Vec& x, const Vec& u, const QuadParams& params) {
  if (x.size() != kStateDim || u.size() != kControlDim) throw DomainError("quadrotor dimensions mismatch");
  return dynamics_fixed(x, u, params);
}

Mat quad_state_jacobian(const Vec& x, const Vec& /*u*/, const QuadParams& params) {
  if (x.size() != kStateDim) throw DomainError("quadrotor state must have 12 entries");
  return jacobian_fixed(x, params);
}

namespace {

template <class X>
Mat12 jacobian_fixed(const X& x, const QuadParams& params) {
  const Vec3 v = x.template segment<3>(3);
  const Vec3 eta = x.template segment<3>(6);
  const Vec3 w = x.template segment<3>(9);
  const Mat3 r = rotation_matrix(eta);
  const Mat3 k = attitude_kinematics(eta);
  const auto dr = rotation_derivatives(eta);

  const double sa = std::sin(eta[0]), ca = std::cos(eta[0]);
  const double sb = std::sin(eta[1]), cb = std::cos(eta[1]);
  const double tb = sb / cb, secb = 1.0 / cb;
  Mat3 dk_roll, dk_pitch;
  dk_roll << 0.0, ca * tb, -sa * tb,
      0.0, -sa, -ca,
      0.0, ca * secb, -sa * secb;
  dk_pitch << 0.0, sa * secb * secb, ca * secb * secb,
      0.0, 0.0, 0.0,
      0.0, sa * secb * tb, ca * secb * tb;

  Mat12 jac = Mat12::Zero();
  // p' = R^T v
  jac.block<3, 3>(0, 3) = r.transpose();
  for (int i = 0; i < 3; ++i) jac.block<3, 1>(0, 6 + i) = dr[i].transpose() * v;
  // v' = -w x v - g R e3 + thrust / m e3
  jac.block<3, 3>(3, 3) = -skew(w);
  for (int i = 0; i < 3; ++i) jac.block<3, 1>(3, 6 + i) = -params.g * dr[i].col(2);
  jac.block<3, 3>(3, 9) = skew(v);
  // eta' = K w
  jac.block<3, 1>(6, 6) = dk_roll * w;
  jac.block<3, 1>(6, 7) = dk_pitch * w;
  jac.block<3, 3>(6, 9) = k;
  // w' = -J^-1 (w x J w) + J^-1 tau
  const Mat3 jmat = params.J.asDiagonal();
  const Mat3 jinv = params.J.cwiseInverse().asDiagonal();
  jac.block<3, 3>(9, 9) = -jinv * (skew(w) * jmat - skew(jmat * w));
  return jac;
}

}  // namespace

Mat quad_control_jacobian(const QuadParams& params) {
  Mat fu = Mat::Zero(kStateDim, kControlDim);
  fu(5, 0) = 1.0 / params.m;
  for (int i = 0; i < 3; ++i) fu(9 + i, 1 + i) = 1.0 / params.J[i];
  return fu;
}

std::pair<double, double> landing_costs(const Vec& x, const Vec& u, const LandingCost& cost) {
  const Eigen::Vector4d du = u - cost.u_d;
  const double running = du.dot(cost.q_u.cwiseProduct(du));
  const double terminal = x.dot(cost.q_f.cwiseProduct(x));
  return {running, terminal};
}

Eigen::Matrix4d mixing_matrix(const QuadParams& params) {
  const double l = params.l, c = params.c;
  Eigen::Matrix4d e;
  e << 1, 1, 1, 1,
      0, l, 0, -l,
      -l, 0, l, 0,
      c, -c, c, -c;
  return e;
}

Eigen::Vector4d rotor_mixing(const Vec& u, const QuadParams& params) {
  if (!(params.l > 0.0) || params.c == 0.0) throw DomainError("rotor mixing needs l > 0 and c != 0");
  const Eigen::Vector4d rhs = u;
  return mixing_matrix(params).partialPivLu().solve(rhs);
}

QuadState sample_initial(const InitialBox& box, std::mt19937_64& rng) {
  box.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec x(kStateDim);
  for (int i = 0; i < kStateDim; ++i) x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * unit(rng);
  return QuadState::unpack(x);
}

ControlProblem make_landing_problem(const QuadParams& params, const LandingCost& cost, double horizon) {
  params.validate();
  ControlProblem p;
  p.state_dim = kStateDim;
  p.control_dim = kControlDim;
  p.horizon = horizon;
  p.dynamics = [params](double, const Vec& x, const Vec& u) { return quad_dynamics(x, u, params); };
  p.running_cost = [cost](double, const Vec& x, const Vec& u) { return landing_costs(x, u, cost).first; };
  p.terminal_cost = [cost](const Vec& x) { return x.dot(cost.q_f.cwiseProduct(x)); };
  return p;
}

pmp::TpbvpProblem make_landing_tpbvp(const QuadParams& params, const LandingCost& cost, double horizon) {
  pmp::TpbvpProblem prob;
  prob.base = make_landing_problem(params, cost, horizon);
  const Mat fu = quad_control_jacobian(params);
  prob.f_x = [params](double, const Vec& x, const Vec& u) { return quad_state_jacobian(x, u, params); };
  prob.f_u = [fu](double, const Vec&, const Vec&) { return fu; };
  prob.L_x = [](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(kStateDim); };
  prob.L_u = [cost](double, const Vec&, const Vec& u) -> Vec {
    const Eigen::Vector4d du = u - cost.u_d;
    return 2.0 * cost.q_u.cwiseProduct(du);
  };
  prob.grad_M = [cost](const Vec& x) -> Vec { return 2.0 * cost.q_f.cwiseProduct(x); };
  prob.hamiltonian_minimizer = [cost, fu](double, const Vec&, const Vec& lam) -> Vec {
    const Eigen::Vector4d ftl = fu.transpose() * lam;
    return cost.u_d - 0.5 * ftl.cwiseQuotient(cost.q_u);
  };
  prob.terminal_target = Vec::Zero(kStateDim);
  prob.state_costate_rhs = [params, cost](double, const Vec& z) -> Vec {
    const Vec12 x = z.head<12>();
    const Vec12 lam = z.tail<12>();
    Eigen::Vector4d u;
    u[0] = cost.u_d[0] - 0.5 * lam[5] / (params.m * cost.q_u[0]);
    for (int i = 0; i < 3; ++i) u[1 + i] = cost.u_d[1 + i] - 0.5 * lam[9 + i] / (params.J[i] * cost.q_u[1 + i]);
    Vec dz(24);
    dz.head<12>() = dynamics_fixed(x, u, params);
    dz.tail<12>() = -(jacobian_fixed(x, params).transpose() * lam);
    return dz;
  };
  return prob;
}

}  // namespace ivps::quad
