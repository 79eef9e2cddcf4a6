#pragma once

#include <Eigen/Dense>

#include <random>
#include <utility>

#include "ivps/control_core.hpp"
#include "ivps/pmp.hpp"

namespace ivps::quad {

inline constexpr int kStateDim = 12;
inline constexpr int kControlDim = 4;
/// Euler kinematics are rejected once |pitch| reaches pi/2 - kPitchGuard.
inline constexpr double kPitchGuard = 1e-6;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct QuadParams {
  double m = 2.0;
  Vec3 J{1.2416, 1.2416, 2.4832};
  double g = 9.81;
  double l = 0.2;   // arm length, rotor mixing only
  double c = 0.05;  // rotor moment constant, rotor mixing only

  void validate() const;
};

/// x = (p, v_b, eta, w_b): Earth-frame position, body-frame velocity,
/// roll/pitch/yaw, body-frame angular velocity.
struct QuadState {
  Vec3 p = Vec3::Zero();
  Vec3 v_b = Vec3::Zero();
  Vec3 eta = Vec3::Zero();
  Vec3 w_b = Vec3::Zero();

  Vec pack() const;
  static QuadState unpack(const Vec& x);
};

struct QuadControl {
  double thrust = 0.0;
  Vec3 tau = Vec3::Zero();

  Vec pack() const;
  static QuadControl unpack(const Vec& u);
};

struct LandingCost {
  Eigen::Vector4d q_u = Eigen::Vector4d::Ones();
  Eigen::Vector4d u_d = Eigen::Vector4d::Zero();
  Eigen::Matrix<double, 12, 1> q_f;

  /// Q_u = I, u_d = (m g, 0, 0, 0), Q_f = diag(5 I, 10 I, 25 I, 50 I).
  static LandingCost standard(const QuadParams& params);
};

/// Per-coordinate uniform ranges of the initial-state distribution.
struct InitialBox {
  Eigen::Matrix<double, 12, 1> lower;
  Eigen::Matrix<double, 12, 1> upper;

  void validate() const;
  /// x, y in [-40, 40], z in [20, 40], v in [-1, 1], roll and pitch in
  /// [-pi/4, pi/4], yaw in [-pi, pi], w = 0.
  static InitialBox paper();
  /// The full box with positions scaled by position_scale and angles by angle_scale.
  static InitialBox scaled(double position_scale, double angle_scale);
  static InitialBox desk() { return scaled(0.2, 0.5); }
};

/// Earth-to-body rotation R(eta).
Mat3 rotation_matrix(const Vec3& eta);
/// Maps body angular velocity to Euler-angle rates; throws SingularityError near |pitch| = pi/2.
Mat3 attitude_kinematics(const Vec3& eta);

Vec quad_dynamics(const Vec& x, const Vec& u, const QuadParams& params);
/// d f / d x, 12 x 12.
Mat quad_state_jacobian(const Vec& x, const Vec& u, const QuadParams& params);
/// d f / d u, 12 x 4 (constant).
Mat quad_control_jacobian(const QuadParams& params);

/// (L, M) = ((u - u_d)^T Q_u (u - u_d), x^T Q_f x).
std::pair<double, double> landing_costs(const Vec& x, const Vec& u, const LandingCost& cost);

Eigen::Matrix4d mixing_matrix(const QuadParams& params);
/// Rotor thrusts F with E F = u; throws DomainError for a singular E.
Eigen::Vector4d rotor_mixing(const Vec& u, const QuadParams& params);

QuadState sample_initial(const InitialBox& box, std::mt19937_64& rng);

ControlProblem make_landing_problem(const QuadParams& params, const LandingCost& cost, double horizon);
/// The landing problem with analytic Jacobians and the closed-form
/// Hamiltonian minimiser u* = u_d - 1/2 Q_u^-1 f_u^T lam.
pmp::TpbvpProblem make_landing_tpbvp(const QuadParams& params, const LandingCost& cost, double horizon);

}  // namespace ivps::quad
