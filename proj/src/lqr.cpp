#include "ivps/lqr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "ivps/errors.hpp"
#include "ivps/parallel.hpp"

namespace ivps::lqr {

namespace {

constexpr double kRidge = 1e-12;

std::vector<double> default_knots(double T) { return {0.0, T}; }

std::vector<double> knots_through(int i, int T) {
  std::vector<double> k;
  for (int j = 0; j <= i; ++j) k.push_back(j);
  k.push_back(T);
  return k;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void LqrSpec::validate() const {
  if (T < 1) throw DomainError("LQR horizon must be a positive integer");
  if (!(epsilon >= 0.0)) throw DomainError("LQR noise scale must be non-negative");
  if (N < 1) throw DomainError("LQR path count must be positive");
  if (!(dt > 0.0)) throw DomainError("LQR node spacing must be positive");
  const double per_unit = 1.0 / dt;
  if (std::abs(per_unit - std::round(per_unit)) > 1e-9 * per_unit)
    throw DomainError("LQR node spacing must divide 1");
}

long LqrSpec::nodes() const { return std::lround(static_cast<double>(T) / dt) + 1; }

std::string to_string(Model m) { return m == Model::kModel1 ? "model1" : "model2"; }
std::string to_string(Method m) { return m == Method::kVanilla ? "vanilla" : "ivp"; }

double optimal_closed_loop(double t, double x, double T) { return -T * x / gain_denominator(t, T); }

double optimal_open_loop(double t0, double x0, double T) { return -T * x0 / gain_denominator(t0, T); }

double optimal_cost(double x0, double T) { return x0 * x0 / (T * T + 1.0); }

ControlProblem make_problem(double T) {
  ControlProblem p;
  p.state_dim = 1;
  p.control_dim = 1;
  p.horizon = T;
  p.dynamics = [](double, const Vec&, const Vec& u) -> Vec { return u; };
  p.running_cost = [T](double, const Vec&, const Vec& u) { return u.squaredNorm() / T; };
  p.terminal_cost = [](const Vec& x) { return x.squaredNorm(); };
  return p;
}

pmp::TpbvpProblem make_tpbvp(double T) {
  pmp::TpbvpProblem p;
  p.base = make_problem(T);
  p.f_x = [](double, const Vec&, const Vec&) -> Mat { return Mat::Zero(1, 1); };
  p.f_u = [](double, const Vec&, const Vec&) -> Mat { return Mat::Identity(1, 1); };
  p.L_x = [](double, const Vec&, const Vec&) -> Vec { return Vec::Zero(1); };
  p.L_u = [T](double, const Vec&, const Vec& u) -> Vec { return 2.0 * u / T; };
  p.grad_M = [](const Vec& x) -> Vec { return 2.0 * x; };
  p.hamiltonian_minimizer = [T](double, const Vec&, const Vec& lam) -> Vec { return -0.5 * T * lam; };
  return p;
}

NoisyPath noisy_open_loop(double t0, double x0, const LqrSpec& spec, Rng& rng) {
  if (t0 < 0.0 || t0 >= spec.T) throw DomainError("noisy oracle start time must lie in [0, T)");
  std::normal_distribution<double> normal(0.0, 1.0);
  return NoisyPath{t0, x0, normal(rng), static_cast<double>(spec.T), spec.epsilon};
}

int LqrData::owner(double t) const {
  const int last = static_cast<int>(by_iteration.size()) - 1;
  const int i = static_cast<int>(std::floor(t + kTimeEps));
  return std::clamp(i, 0, last);
}

double fit_slice_model1(double t, double T, const std::vector<double>& x, const std::vector<double>& u) {
  if (x.empty() || x.size() != u.size()) throw InsufficientData(t, "empty or ragged Model-1 slice");
  const double gain = T / gain_denominator(t, T);
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += u[j] + gain * x[j];
  return s / static_cast<double>(x.size());
}

SliceFit fit_slice_model2(const std::vector<double>& x, const std::vector<double>& u, bool allow_ridge) {
  if (x.empty() || x.size() != u.size()) throw InsufficientData(0.0, "empty or ragged Model-2 slice");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, mu = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    mx += x[j];
    mu += u[j];
  }
  mx /= n;
  mu /= n;
  double sxx = 0.0, sxu = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    sxx += (x[j] - mx) * (x[j] - mx);
    sxu += (x[j] - mx) * (u[j] - mu);
    scale += x[j] * x[j];
  }
  SliceFit fit;
  if (sxx <= 1e-13 * scale || sxx == 0.0) {
    if (!allow_ridge) throw SingularFit("Model-2 slice has no spread in x");
    fit.ridge = true;
    // Ridge on the slope only; the intercept stays unpenalised.
    fit.a = sxu / (sxx + kRidge);
  } else {
    fit.a = sxu / sxx;
  }
  fit.b = mu - fit.a * mx;
  return fit;
}

Model1Params fit_model1(const LqrData& data, const LqrSpec& spec) {
  const long nodes = spec.nodes();
  const double T = spec.T;
  Model1Params p;
  p.b.resize(nodes);
  for (long k = 0; k < nodes; ++k) {
    const double t = spec.node_time(k);
    const auto& paths = data.paths_at(t);
    if (paths.empty()) throw InsufficientData(t, "no training paths cover the node");
    const double gain = T / gain_denominator(t, T);
    double s = 0.0;
    for (const auto& path : paths) s += path.u_hat(t) + gain * path.x_hat(t);
    p.b[k] = s / static_cast<double>(paths.size());
  }
  return p;
}

Model2Params fit_model2(const LqrData& data, const LqrSpec& spec, bool allow_ridge) {
  const long nodes = spec.nodes();
  Model2Params p;
  p.a.resize(nodes);
  p.b.resize(nodes);
  std::vector<double> xs, us;
  for (long k = 0; k < nodes; ++k) {
    const double t = spec.node_time(k);
    const auto& paths = data.paths_at(t);
    if (paths.empty()) throw InsufficientData(t, "no training paths cover the node");
    xs.clear();
    us.clear();
    for (const auto& path : paths) {
      xs.push_back(path.x_hat(t));
      us.push_back(path.u_hat(t));
    }
    const SliceFit fit = fit_slice_model2(xs, us, allow_ridge);
    p.a[k] = fit.a;
    p.b[k] = fit.b;
    if (fit.ridge) p.ridge_times.push_back(t);
  }
  return p;
}

LqrController::LqrController(Model model, double T, double dt, std::vector<double> knots,
                             std::vector<double> a_nodes, std::vector<double> b_nodes)
    : model_(model), T_(T), dt_(dt), knots_(std::move(knots)) {
  TemporalGrid check(knots_);
  if (std::abs(knots_.back() - T) > kTimeEps) throw DomainError("controller knots must end at T");
  const long nodes = std::lround(T / dt) + 1;
  if (static_cast<long>(b_nodes.size()) != nodes) throw DomainError("b coefficients do not match the node grid");
  if (model == Model::kModel2 && static_cast<long>(a_nodes.size()) != nodes)
    throw DomainError("a coefficients do not match the node grid");
  scaled_b_.resize(nodes);
  for (long k = 0; k < nodes; ++k) scaled_b_[k] = b_nodes[k] * gain_denominator(k * dt, T);
  if (model == Model::kModel2) {
    scaled_a_.resize(nodes);
    for (long k = 0; k < nodes; ++k) scaled_a_[k] = a_nodes[k] * gain_denominator(k * dt, T);
  }
}

LqrController LqrController::from_model1(const Model1Params& p, const LqrSpec& spec, std::vector<double> knots) {
  return LqrController(Model::kModel1, spec.T, spec.dt, std::move(knots), {}, p.b);
}

LqrController LqrController::from_model2(const Model2Params& p, const LqrSpec& spec, std::vector<double> knots) {
  return LqrController(Model::kModel2, spec.T, spec.dt, std::move(knots), p.a, p.b);
}

LqrController LqrController::optimal(double T, double dt) {
  const long nodes = std::lround(T / dt) + 1;
  return LqrController(Model::kModel1, T, dt, default_knots(T), {}, std::vector<double>(nodes, 0.0));
}

double LqrController::scaled(const std::vector<double>& v, double t, bool before) const {
  const int intervals = static_cast<int>(knots_.size()) - 1;
  int seg = 0;
  if (before) {
    seg = static_cast<int>(std::lower_bound(knots_.begin(), knots_.end(), t - kTimeEps) - knots_.begin()) - 1;
  } else {
    seg = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), t + kTimeEps) - knots_.begin()) - 1;
  }
  seg = std::clamp(seg, 0, intervals - 1);
  const long k_lo = std::lround(knots_[seg] / dt_);
  const long k_end = std::lround(knots_[seg + 1] / dt_);
  const long k_hi = (seg == intervals - 1) ? k_end : k_end - 1;
  if (k_hi <= k_lo) return v[k_lo];
  const double pos = t / dt_;
  const long j = std::clamp(static_cast<long>(std::floor(pos)), k_lo, k_hi - 1);
  const double w = pos - static_cast<double>(j);
  return v[j] + w * (v[j + 1] - v[j]);
}

double LqrController::a_at(double t, bool before) const {
  if (model_ == Model::kModel1) return -T_ / gain_denominator(t, T_);
  return scaled(scaled_a_, t, before) / gain_denominator(t, T_);
}

double LqrController::b_at(double t, bool before) const {
  return scaled(scaled_b_, t, before) / gain_denominator(t, T_);
}

double LqrController::control(double t, double x, bool before) const {
  return a_at(t, before) * x + b_at(t, before);
}

Vec LqrController::evaluate(double t, const Vec& x) const {
  return Vec::Constant(1, control(t, x[0], false));
}

Vec LqrController::evaluate_before(double t, const Vec& x) const {
  return Vec::Constant(1, control(t, x[0], true));
}

ScalarRollout rollout(const LqrController& controller, double x0, double t0, double t1, double dt) {
  const double span = t1 - t0;
  const long full = static_cast<long>(std::floor(span / dt + 1e-9));
  const bool tail = span - static_cast<double>(full) * dt > kTimeEps * std::max(1.0, span);
  const long steps = full + (tail ? 1 : 0);
  const double T = controller.horizon();

  ScalarRollout out;
  out.x.reserve(steps + 1);
  double x = x0;
  double t = t0;
  out.x.push_back(x);
  double prev_l = 0.0;
  double running = 0.0;
  for (long k = 0; k < steps; ++k) {
    const double t_next = (k + 1 == steps) ? t1 : t0 + static_cast<double>(k + 1) * dt;
    const double h = t_next - t;
    const double u = controller.control(t, x);
    const double k1 = u;
    const double k2 = controller.control(t + 0.5 * h, x + 0.5 * h * k1);
    const double k3 = controller.control(t + 0.5 * h, x + 0.5 * h * k2);
    const double k4 = controller.control(t_next, x + h * k3, true);
    const double x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(x_next)) throw IntegrationDiverged(t, "scalar rollout diverged");
    const double l = u * u / T;
    if (k > 0) running += 0.5 * (prev_l + l) * (t - (t0 + static_cast<double>(k - 1) * dt));
    prev_l = l;
    x = x_next;
    t = t_next;
    out.x.push_back(x);
  }
  // Close the trapezoid on the last cell with the left-limit control at t1.
  const double u_end = controller.control(t, x, true);
  const double l_end = u_end * u_end / T;
  const double t_last = steps > 1 ? t0 + static_cast<double>(steps - 1) * dt : t0;
  running += 0.5 * (prev_l + l_end) * (t - t_last);
  out.cost = running + x * x;
  return out;
}

LqrRun run_vanilla(const LqrSpec& spec, Model model, Rng rng) {
  spec.validate();
  const int count = spec.N * spec.T;
  std::normal_distribution<double> normal(0.0, 1.0);
  LqrRun run;
  run.initial_states.resize(count);
  for (auto& x : run.initial_states) x = normal(rng);
  run.data.T = spec.T;
  run.data.by_iteration.emplace_back();
  auto& paths = run.data.by_iteration.back();
  paths.reserve(count);
  for (double x0 : run.initial_states) {
    paths.push_back(noisy_open_loop(0.0, x0, spec, rng));
    ++run.oracle_calls;
  }
  run.reached.push_back(run.initial_states);
  if (model == Model::kModel1) {
    run.controller = std::make_shared<LqrController>(
        LqrController::from_model1(fit_model1(run.data, spec), spec, default_knots(spec.T)));
  } else {
    const auto p = fit_model2(run.data, spec);
    for (double t : p.ridge_times) {
      std::ostringstream os;
      os << "ridge fallback at t = " << t;
      run.warnings.push_back(os.str());
    }
    run.controller = std::make_shared<LqrController>(LqrController::from_model2(p, spec, default_knots(spec.T)));
  }
  return run;
}

LqrRun run_ivp_enhanced(const LqrSpec& spec, Model model, Rng rng) {
  spec.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  LqrRun run;
  run.initial_states.resize(spec.N);
  for (auto& x : run.initial_states) x = normal(rng);
  run.data.T = spec.T;

  std::shared_ptr<const LqrController> current;
  for (int i = 0; i < spec.T; ++i) {
    std::vector<double> reached(spec.N);
    for (int j = 0; j < spec.N; ++j) {
      reached[j] = (i == 0) ? run.initial_states[j]
                            : rollout(*current, run.initial_states[j], 0.0, i, spec.dt).x.back();
    }
    std::vector<NoisyPath> paths;
    paths.reserve(spec.N);
    for (double x : reached) {
      paths.push_back(noisy_open_loop(i, x, spec, rng));
      ++run.oracle_calls;
    }
    run.reached.push_back(std::move(reached));
    run.data.by_iteration.push_back(std::move(paths));

    auto knots = knots_through(i, spec.T);
    if (model == Model::kModel1) {
      current = std::make_shared<LqrController>(
          LqrController::from_model1(fit_model1(run.data, spec), spec, std::move(knots)));
    } else {
      const auto p = fit_model2(run.data, spec);
      for (double t : p.ridge_times) {
        std::ostringstream os;
        os << "iteration " << i << ": ridge fallback at t = " << t;
        run.warnings.push_back(os.str());
      }
      current = std::make_shared<LqrController>(LqrController::from_model2(p, spec, std::move(knots)));
    }
  }
  run.controller = current;
  return run;
}

LqrRun run_method(const LqrSpec& spec, Method method, Model model, Rng rng) {
  return method == Method::kVanilla ? run_vanilla(spec, model, std::move(rng))
                                    : run_ivp_enhanced(spec, model, std::move(rng));
}

Theorem1Report theorem1_predictions(const LqrSpec& spec) {
  const double T = spec.T;
  const double N = spec.N;
  const double e2 = spec.epsilon * spec.epsilon;
  Theorem1Report r;
  r.vanilla_perf_gap = (T * T + 1.0) * e2 / (N * T);
  double tail = 0.0;
  for (int k = 1; k <= spec.T - 1; ++k) tail += 1.0 / (T * k + 1.0);
  r.ivp_perf_gap_exact = e2 / N * (2.0 + tail);
  r.ivp_perf_gap_bound = 3.0 * e2 / N;
  r.ivp_moment_gap_bound = e2;
  r.vanilla_moment_gap = [=](double t) { return (1.0 - 1.0 / (N * T)) * e2 * t * t; };
  const int last = spec.T - 1;
  r.ivp_moment_gap = [=](double t) {
    const int i = std::clamp(static_cast<int>(std::floor(t + kTimeEps)), 0, last);
    return e2 * (t - i) * (t - i) * (1.0 - 1.0 / N);
  };
  return r;
}

double model1_reached_state(int i, double x_init, const std::vector<double>& zbar, const LqrSpec& spec) {
  const double T = spec.T;
  const double si = gain_denominator(i, T);
  double x = si / (T * T + 1.0) * x_init;
  for (int k = 0; k < i; ++k) x += si / gain_denominator(k + 1, T) * spec.epsilon * zbar[k];
  return x;
}

std::vector<double> noise_means(const LqrData& data) {
  std::vector<double> out;
  for (const auto& paths : data.by_iteration) {
    double s = 0.0;
    for (const auto& p : paths) s += p.z;
    out.push_back(s / static_cast<double>(paths.size()));
  }
  return out;
}

Rng evaluation_rng(std::uint64_t base_seed, int replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed & 0xffffffffu), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(replicate), 0x5eedu};
  return Rng(seq);
}

GapEstimate monte_carlo_perf_gap(const ControllerFactory& factory, const LqrSpec& spec, int n_repeats,
                                 int n_eval_points, std::uint64_t base_seed, int threads) {
  if (n_repeats < 2) throw DomainError("performance gap needs at least two replicates");
  if (n_eval_points < 1) throw DomainError("performance gap needs evaluation points");
  GapEstimate est;
  est.per_replicate = parallel_map<double>(n_repeats, threads, [&](std::size_t r) {
    const auto controller = factory(Rng(base_seed + r));
    Rng eval = evaluation_rng(base_seed, static_cast<int>(r));
    std::normal_distribution<double> normal(0.0, 1.0);
    double total = 0.0;
    for (int e = 0; e < n_eval_points; ++e) {
      const double x = normal(eval);
      total += rollout(*controller, x, 0.0, spec.T, spec.dt).cost - optimal_cost(x, spec.T);
    }
    return total / n_eval_points;
  });
  est.mean = mean(est.per_replicate);
  est.std_error = sample_std(est.per_replicate) / std::sqrt(static_cast<double>(n_repeats));
  return est;
}

std::vector<MomentGapEstimate> moment_gap_experiment(const LqrSpec& spec, Method method, Model model,
                                                     const std::vector<double>& times, int n_repeats,
                                                     int n_eval_points, std::uint64_t base_seed, int threads) {
  if (n_repeats < 2) throw DomainError("moment gap needs at least two replicates");
  const auto report = theorem1_predictions(spec);
  struct Replicate {
    std::vector<double> training, reached;
  };
  const auto reps = parallel_map<Replicate>(n_repeats, threads, [&](std::size_t r) {
    const LqrRun run = run_method(spec, method, model, Rng(base_seed + r));
    Replicate rep;
    rep.training.assign(times.size(), 0.0);
    rep.reached.assign(times.size(), 0.0);
    for (std::size_t q = 0; q < times.size(); ++q) {
      const auto& paths = run.data.paths_at(times[q]);
      double s = 0.0;
      for (const auto& p : paths) s += p.x_hat(times[q]) * p.x_hat(times[q]);
      rep.training[q] = s / static_cast<double>(paths.size());
    }
    Rng eval = evaluation_rng(base_seed, static_cast<int>(r));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int e = 0; e < n_eval_points; ++e) {
      const auto roll = rollout(*run.controller, normal(eval), 0.0, spec.T, spec.dt);
      for (std::size_t q = 0; q < times.size(); ++q) {
        const double x = roll.x[std::lround(times[q] / spec.dt)];
        rep.reached[q] += x * x / n_eval_points;
      }
    }
    return rep;
  });

  std::vector<MomentGapEstimate> out;
  for (std::size_t q = 0; q < times.size(); ++q) {
    MomentGapEstimate m;
    m.t = times[q];
    m.predicted = method == Method::kVanilla ? report.vanilla_moment_gap(times[q]) : report.ivp_moment_gap(times[q]);
    std::vector<double> diffs;
    for (const auto& rep : reps) {
      m.training_moment += rep.training[q] / n_repeats;
      m.reached_moment += rep.reached[q] / n_repeats;
      diffs.push_back(rep.training[q] - rep.reached[q]);
    }
    m.empirical = std::abs(mean(diffs));
    m.std_error = sample_std(diffs) / std::sqrt(static_cast<double>(n_repeats));
    out.push_back(m);
  }
  return out;
}

}  // namespace ivps::lqr
