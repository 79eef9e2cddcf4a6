#include "ivps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>

#include "ivps/errors.hpp"
#include "ivps/parallel.hpp"

namespace ivps::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double kernel_mean(const std::vector<Vec>& A, const std::vector<Vec>& B, bool skip_diagonal) {
  double sum = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < B.size(); ++j) {
      if (skip_diagonal && i == j) continue;
      sum += std::exp(-0.5 * (A[i] - B[j]).squaredNorm());
      ++count;
    }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// Controller whose input is perturbed by per-step noise. Step k covers
// [t0 + k dt, t0 + (k + 1) dt); the left limit at a step end uses step k.
class NoisyInputController final : public ClosedLoopController {
 public:
  NoisyInputController(const ClosedLoopController& inner, std::vector<Vec> noise, double t0, double dt)
      : inner_(inner), noise_(std::move(noise)), t0_(t0), dt_(dt) {}

  Vec evaluate(double t, const Vec& x) const override {
    return perturbed(t, x, static_cast<long>(std::floor((t - t0_) / dt_ + 1e-7)), false);
  }
  Vec evaluate_before(double t, const Vec& x) const override {
    return perturbed(t, x, static_cast<long>(std::ceil((t - t0_) / dt_ - 1e-7)) - 1, true);
  }

 private:
  Vec perturbed(double t, const Vec& x, long k, bool before) const {
    k = std::clamp<long>(k, 0, static_cast<long>(noise_.size()) - 1);
    const Vec& e = noise_[static_cast<std::size_t>(k)];
    const Vec xp = x + e.tail(x.size());
    return before ? inner_.evaluate_before(t + e[0], xp) : inner_.evaluate(t + e[0], xp);
  }

  const ClosedLoopController& inner_;
  std::vector<Vec> noise_;
  double t0_;
  double dt_;
};

class TimeShiftedOpenLoop final : public ClosedLoopController {
 public:
  TimeShiftedOpenLoop(const Trajectory& traj, std::vector<double> shifts, double t0, double dt)
      : traj_(traj), shifts_(std::move(shifts)), t0_(t0), dt_(dt) {}

  Vec evaluate(double t, const Vec&) const override {
    return traj_.control_at(t + shift(static_cast<long>(std::floor((t - t0_) / dt_ + 1e-7))));
  }
  Vec evaluate_before(double t, const Vec&) const override {
    return traj_.control_at(t + shift(static_cast<long>(std::ceil((t - t0_) / dt_ - 1e-7)) - 1));
  }

 private:
  double shift(long k) const {
    k = std::clamp<long>(k, 0, static_cast<long>(shifts_.size()) - 1);
    return shifts_[static_cast<std::size_t>(k)];
  }

  const Trajectory& traj_;
  std::vector<double> shifts_;
  double t0_;
  double dt_;
};

double rollout_ratio(const ControlProblem& problem, const ClosedLoopController& c, const pmp::TpbvpSolution& ref,
                     double dt) {
  if (!ref.converged) throw DomainError("cost ratios need converged references");
  try {
    const auto traj = integrate_ivp(problem, c, ref.initial_state(), ref.start_time(), problem.horizon, dt);
    const double cost = evaluate_cost(problem, traj);
    if (!std::isfinite(cost)) return kInf;
    return cost / ref.cost;
  } catch (const IntegrationDiverged&) {
    return kInf;
  }
}

long step_total(double span, double dt) { return static_cast<long>(std::ceil(span / dt - 1e-9)); }

std::mt19937_64 trial_rng(std::uint64_t seed, std::size_t ref, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(ref), static_cast<std::uint32_t>(trial)};
  return std::mt19937_64(seq);
}

}  // namespace

double pointwise_distance(const SnapshotPair& pair) {
  if (pair.training_states.size() != pair.reached_states.size())
    throw AlignmentError("snapshot sets have different sizes");
  if (pair.training_states.empty()) throw DomainError("snapshot sets are empty");
  double sum = 0.0;
  for (std::size_t k = 0; k < pair.training_states.size(); ++k)
    sum += (pair.training_states[k] - pair.reached_states[k]).norm();
  return sum / static_cast<double>(pair.training_states.size());
}

double mmd_gaussian(const std::vector<Vec>& X, const std::vector<Vec>& Y, bool unbiased) {
  if (X.empty() || Y.empty()) throw DomainError("MMD needs non-empty sets");
  if (unbiased && (X.size() < 2 || Y.size() < 2)) throw DomainError("unbiased MMD needs two points per set");
  // Fixed argument order so that MMD(X, Y) and MMD(Y, X) round identically.
  const bool swap = std::lexicographical_compare(Y.begin(), Y.end(), X.begin(), X.end(), [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
  const auto& A = swap ? Y : X;
  const auto& B = swap ? X : Y;
  const double mmd2 = kernel_mean(A, A, unbiased) + kernel_mean(B, B, unbiased) - 2.0 * kernel_mean(A, B, false);
  return std::sqrt(std::max(0.0, mmd2));
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return values[lo] + w * (values[hi] - values[lo]);
}

RatioSummary summarize_ratios(const std::vector<double>& ratios) {
  RatioSummary s;
  s.count = static_cast<int>(ratios.size());
  std::vector<double> finite;
  for (double r : ratios) {
    if (std::isfinite(r)) finite.push_back(r);
    else ++s.diverged;
  }
  if (finite.empty()) {
    s.mean = s.std = s.p90 = s.p75 = s.median = std::numeric_limits<double>::quiet_NaN();
    s.max = s.diverged > 0 ? kInf : std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double r : finite) sum += r;
  s.mean = sum / static_cast<double>(finite.size());
  double ss = 0.0;
  for (double r : finite) ss += (r - s.mean) * (r - s.mean);
  s.std = finite.size() > 1 ? std::sqrt(ss / static_cast<double>(finite.size() - 1)) : 0.0;
  s.max = s.diverged > 0 ? kInf : *std::max_element(finite.begin(), finite.end());
  s.p90 = percentile(finite, 90.0);
  s.p75 = percentile(finite, 75.0);
  s.median = percentile(finite, 50.0);
  return s;
}

RatioTable cost_ratio_table(const ControlProblem& problem, const ClosedLoopController& controller,
                            const std::vector<pmp::TpbvpSolution>& refs, double rollout_dt, int threads) {
  RatioTable table;
  table.ratios = parallel_map<double>(refs.size(), threads, [&](std::size_t k) {
    return rollout_ratio(problem, controller, refs[k], rollout_dt);
  });
  table.summary = summarize_ratios(table.ratios);
  return table;
}

RatioTable disturbance_eval(const ControlProblem& problem, const ClosedLoopController& controller,
                            const std::vector<pmp::TpbvpSolution>& refs, double sigma, int trials,
                            double rollout_dt, std::uint64_t seed, int threads) {
  if (!(sigma >= 0.0)) throw DomainError("sigma must be non-negative");
  if (trials < 1) throw DomainError("trials must be positive");
  const std::size_t total = refs.size() * static_cast<std::size_t>(trials);
  RatioTable table;
  table.ratios = parallel_map<double>(total, threads, [&](std::size_t idx) {
    const std::size_t r = idx / static_cast<std::size_t>(trials);
    const int trial = static_cast<int>(idx % static_cast<std::size_t>(trials));
    const auto& ref = refs[r];
    const long steps = step_total(problem.horizon - ref.start_time(), rollout_dt);
    auto rng = trial_rng(seed, r, trial);
    std::uniform_real_distribution<double> u(-sigma, sigma);
    std::vector<Vec> noise(static_cast<std::size_t>(steps));
    for (auto& e : noise) {
      e.resize(1 + problem.state_dim);
      for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = sigma > 0.0 ? u(rng) : 0.0;
    }
    const NoisyInputController noisy(controller, std::move(noise), ref.start_time(), rollout_dt);
    return rollout_ratio(problem, noisy, ref, rollout_dt);
  });
  table.summary = summarize_ratios(table.ratios);
  return table;
}

RatioTable open_loop_time_disturbance(const ControlProblem& problem, const std::vector<pmp::TpbvpSolution>& refs,
                                      double sigma, int trials, double rollout_dt, std::uint64_t seed,
                                      int threads) {
  if (!(sigma >= 0.0)) throw DomainError("sigma must be non-negative");
  if (trials < 1) throw DomainError("trials must be positive");
  const std::size_t total = refs.size() * static_cast<std::size_t>(trials);
  RatioTable table;
  table.ratios = parallel_map<double>(total, threads, [&](std::size_t idx) {
    const std::size_t r = idx / static_cast<std::size_t>(trials);
    const int trial = static_cast<int>(idx % static_cast<std::size_t>(trials));
    const auto& ref = refs[r];
    const long steps = step_total(problem.horizon - ref.start_time(), rollout_dt);
    auto rng = trial_rng(seed, r, trial);
    std::uniform_real_distribution<double> u(-sigma, sigma);
    std::vector<double> shifts(static_cast<std::size_t>(steps));
    for (auto& s : shifts) s = sigma > 0.0 ? u(rng) : 0.0;
    const TimeShiftedOpenLoop replay(ref.trajectory, std::move(shifts), ref.start_time(), rollout_dt);
    return rollout_ratio(problem, replay, ref, rollout_dt);
  });
  table.summary = summarize_ratios(table.ratios);
  return table;
}

std::vector<std::pair<double, double>> ratio_cdf(const std::vector<double>& ratios) {
  std::vector<double> finite;
  for (double r : ratios)
    if (std::isfinite(r)) finite.push_back(r);
  std::sort(finite.begin(), finite.end());
  std::vector<std::pair<double, double>> cdf;
  const double n = static_cast<double>(ratios.size());
  for (std::size_t k = 0; k < finite.size(); ++k) {
    if (k + 1 < finite.size() && finite[k + 1] == finite[k]) continue;
    cdf.emplace_back(finite[k], static_cast<double>(k + 1) / n);
  }
  if (finite.size() < ratios.size()) cdf.emplace_back(kInf, 1.0);
  return cdf;
}

std::vector<MismatchPoint> mismatch_curve(const ControlProblem& problem, const ClosedLoopController& controller,
                                          const Dataset& data, const std::vector<Vec>& initial_states,
                                          double rollout_dt, int threads) {
  if (data.empty()) throw DomainError("mismatch needs a non-empty dataset");
  // Origins present in the data, and the δ-grid slices.
  std::map<int, std::size_t> origin_slot;
  std::map<long, std::vector<std::size_t>> slices;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const int o = data.origins[k];
    if (o < 0 || static_cast<std::size_t>(o) >= initial_states.size())
      throw AlignmentError("dataset origin has no initial state");
    origin_slot.emplace(o, 0);
    slices[std::lround(data.points[k].t / data.delta)].push_back(k);
  }
  std::vector<int> origins;
  for (auto& [o, slot] : origin_slot) {
    slot = origins.size();
    origins.push_back(o);
  }
  const long stride = std::lround(data.delta / rollout_dt);
  if (stride < 1 || std::abs(data.delta / rollout_dt - static_cast<double>(stride)) > 1e-6)
    throw AlignmentError("rollout step must divide the dataset delta");
  struct Rollout {
    bool ok = false;
    Trajectory traj;
  };
  const auto rollouts = parallel_map<Rollout>(origins.size(), threads, [&](std::size_t k) {
    try {
      return Rollout{true, integrate_ivp(problem, controller, initial_states[static_cast<std::size_t>(origins[k])],
                                         0.0, problem.horizon, rollout_dt)};
    } catch (const IntegrationDiverged&) {
      return Rollout{};
    }
  });

  std::vector<MismatchPoint> curve;
  for (const auto& [idx, rows] : slices) {
    const double t = static_cast<double>(idx) * data.delta;
    const auto node = static_cast<std::size_t>(idx * stride);
    SnapshotPair pair;
    pair.t = t;
    std::vector<Vec> reached_all;
    for (const auto& r : rollouts)
      if (r.ok && node < r.traj.size()) reached_all.push_back(r.traj.states[node]);
    for (std::size_t k : rows) {
      const auto& r = rollouts[origin_slot.at(data.origins[k])];
      if (!r.ok || node >= r.traj.size()) continue;
      pair.training_states.push_back(data.points[k].x);
      pair.reached_states.push_back(r.traj.states[node]);
    }
    std::vector<Vec> training_all;
    for (std::size_t k : rows) training_all.push_back(data.points[k].x);
    MismatchPoint p;
    p.t = t;
    p.pointwise = pair.training_states.empty() ? std::numeric_limits<double>::quiet_NaN() : pointwise_distance(pair);
    p.mmd = reached_all.empty() ? std::numeric_limits<double>::quiet_NaN() : mmd_gaussian(training_all, reached_all);
    curve.push_back(p);
  }
  return curve;
}

std::vector<KnotJump> knot_discontinuities(const std::vector<MismatchPoint>& curve,
                                           const std::vector<double>& interior_knots, bool use_mmd) {
  auto value = [&](std::size_t k) { return use_mmd ? curve[k].mmd : curve[k].pointwise; };
  std::vector<KnotJump> out;
  if (curve.size() < 3) return out;
  auto is_knot_step = [&](std::size_t k) {
    for (double knot : interior_knots)
      if (std::abs(curve[k + 1].t - knot) < 1e-9 * std::max(1.0, knot)) return true;
    return false;
  };
  std::vector<double> off;
  for (std::size_t k = 0; k + 1 < curve.size(); ++k)
    if (!is_knot_step(k)) off.push_back(std::abs(value(k + 1) - value(k)));
  const double med = percentile(off, 50.0);
  for (double knot : interior_knots) {
    for (std::size_t k = 0; k + 1 < curve.size(); ++k) {
      if (std::abs(curve[k + 1].t - knot) >= 1e-9 * std::max(1.0, knot)) continue;
      KnotJump j;
      j.knot = knot;
      j.jump = std::abs(value(k + 1) - value(k));
      j.median_off_knot = med;
      j.discontinuous = j.jump > med;
      out.push_back(j);
    }
  }
  return out;
}

void write_ratios_csv(std::ostream& os, const std::vector<double>& ratios) {
  os << "id,ratio\n" << std::setprecision(17);
  for (std::size_t k = 0; k < ratios.size(); ++k) os << k << ',' << ratios[k] << '\n';
}

void write_summary_header(std::ostream& os) { os << "policy,mean,std,max,p90,p75,median,diverged\n"; }

void write_summary_row(std::ostream& os, const std::string& policy, const RatioSummary& s) {
  os << std::setprecision(17) << policy << ',' << s.mean << ',' << s.std << ',' << s.max << ',' << s.p90 << ','
     << s.p75 << ',' << s.median << ',' << s.diverged << '\n';
}

void write_mismatch_csv(std::ostream& os, const std::vector<MismatchPoint>& curve) {
  os << "t,pointwise,mmd\n" << std::setprecision(17);
  for (const auto& p : curve) os << p.t << ',' << p.pointwise << ',' << p.mmd << '\n';
}

void write_cdf_csv(std::ostream& os, const std::vector<double>& ratios) {
  os << "ratio,cum_fraction\n" << std::setprecision(17);
  for (const auto& [r, f] : ratio_cdf(ratios)) os << r << ',' << f << '\n';
}

}  // namespace ivps::metrics
