#pragma once

// Closed-form reference values computed independently of the library code.

#include <cmath>
#include <numeric>
#include <vector>

#include "ivps/lqr.hpp"

namespace oracle {

inline double s(double t, double T) { return T * (T - t) + 1.0; }

inline double mean_z(const std::vector<ivps::lqr::NoisyPath>& paths) {
  double acc = 0.0;
  for (const auto& p : paths) acc += p.z;
  return acc / static_cast<double>(paths.size());
}

/// Vanilla Model-1 controller: -T x / s(t) + (T^2 + 1) / s(t) eps Zbar.
inline double vanilla_control(double t, double x, double T, double eps, double zbar) {
  return -T * x / s(t, T) + (T * T + 1.0) / s(t, T) * eps * zbar;
}

/// IVP-enhanced Model-1 controller on [i, i + 1): -T x / s(t) + s(i) / s(t) eps Zbar_i.
inline double ivp_control(double t, double x, double T, double eps, const std::vector<double>& zbar) {
  const int i = std::min(static_cast<int>(std::floor(t + 1e-9)), static_cast<int>(zbar.size()) - 1);
  return -T * x / s(t, T) + s(i, T) / s(t, T) * eps * zbar[i];
}

/// State reached at knot i under the IVP-enhanced controller. With y = x / s,
/// y' = s(k) eps Zbar_k / s^2 on [k, k + 1), and the integral of 1 / s^2 is
/// (1 / s(k + 1) - 1 / s(k)) / T.
inline double ivp_reached(int i, double x0, double T, double eps, const std::vector<double>& zbar) {
  double y = x0 / s(0.0, T);
  for (int k = 0; k < i; ++k) y += s(k, T) * eps * zbar[k] * (1.0 / s(k + 1, T) - 1.0 / s(k, T)) / T;
  return y * s(i, T);
}

inline double vanilla_perf_gap(double T, double N, double eps) { return (T * T + 1.0) * eps * eps / (N * T); }

}  // namespace oracle
