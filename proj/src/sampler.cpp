#include "ivps/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "ivps/errors.hpp"
#include "ivps/parallel.hpp"

namespace ivps::sampler {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

pmp::TpbvpSolution failed_solution() {
  pmp::TpbvpSolution s;
  s.converged = false;
  s.residuals.terminal_costate_gap = kInf;
  s.residuals.max_stationarity = kInf;
  s.residuals.mesh_residual = kInf;
  s.cost = kInf;
  return s;
}

struct SolveJob {
  Vec x0;
  double t0 = 0.0;
  int origin = 0;
  const pmp::TpbvpSolution* hint = nullptr;
};

// Runs the jobs on the pool and appends their records, in job order.
std::vector<pmp::TpbvpSolution> run_solves(const OpenLoopSolver& solver, const std::vector<SolveJob>& jobs,
                                           int iteration, int threads, SamplingRun& run) {
  auto sols = parallel_map<pmp::TpbvpSolution>(jobs.size(), threads, [&](std::size_t k) {
    const auto& j = jobs[k];
    try {
      return solver.solve(j.x0, j.t0, j.hint);
    } catch (const IntegrationDiverged&) {
      return failed_solution();
    } catch (const SingularityError&) {
      return failed_solution();
    }
  });
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    SolveRecord r;
    r.id = static_cast<int>(run.solves.size());
    r.iteration = iteration;
    r.origin = jobs[k].origin;
    r.t0 = jobs[k].t0;
    r.converged = sols[k].converged;
    r.newton_iterations = sols[k].newton_iterations;
    r.bc_residual = sols[k].residuals.terminal_costate_gap;
    r.stationarity = sols[k].residuals.max_stationarity;
    r.cost = sols[k].cost;
    run.solves.push_back(r);
    ++run.budget;
    if (!r.converged) {
      std::ostringstream msg;
      msg << "iteration " << iteration << ": solve " << r.id << " (origin " << r.origin << ", t0 " << r.t0
          << ") did not converge; dropped";
      run.log.push_back(msg.str());
    }
  }
  return sols;
}

void check_options(const ControlProblem& problem, const SamplerOptions& opts) {
  problem.validate();
  if (opts.N < 1) throw DomainError("N must be at least 1");
  if (!(opts.delta > 0.0) || opts.substeps < 1) throw DomainError("delta and substeps must be positive");
  if (opts.grid.knots.size() < 2) throw DomainError("temporal grid is empty");
  if (std::abs(opts.grid.horizon() - problem.horizon) > kTimeEps) throw DomainError("grid must end at T");
  for (double k : opts.grid.knots) {
    const double r = k / opts.delta;
    if (std::abs(r - std::round(r)) > 1e-6) throw AlignmentError("grid knots must be multiples of delta");
  }
}

Dataset solutions_to_dataset(const std::vector<pmp::TpbvpSolution>& sols, const std::vector<SolveRecord>& recs,
                             double delta) {
  Dataset d;
  d.delta = delta;
  for (std::size_t k = 0; k < sols.size(); ++k)
    if (sols[k].converged) d.append(sample_dataset(sols[k].trajectory, delta), recs[k].id, recs[k].origin);
  return d;
}

void merge_into(Dataset& into, const Dataset& from) {
  for (std::size_t k = 0; k < from.size(); ++k) {
    into.points.push_back(from.points[k]);
    into.trajectory_ids.push_back(from.trajectory_ids[k]);
    into.origins.push_back(from.origins[k]);
  }
}

// Records of the jobs most recently added by run_solves.
std::vector<SolveRecord> tail_records(const SamplingRun& run, std::size_t count) {
  return {run.solves.end() - static_cast<std::ptrdiff_t>(count), run.solves.end()};
}

class ControllerRef final : public ClosedLoopController {
 public:
  explicit ControllerRef(ControllerPtr c) : c_(std::move(c)) {}
  Vec evaluate(double t, const Vec& x) const override { return c_->evaluate(t, x); }
  Vec evaluate_before(double t, const Vec& x) const override { return c_->evaluate_before(t, x); }

 private:
  ControllerPtr c_;
};

}  // namespace

PmpOpenLoopSolver::PmpOpenLoopSolver(pmp::TpbvpProblem prob, pmp::SolverOptions opts, Vec target)
    : prob_(std::move(prob)), opts_(opts), target_(std::move(target)) {}

pmp::TpbvpSolution PmpOpenLoopSolver::solve(const Vec& x0, double t0, const pmp::TpbvpSolution* hint) const {
  if (hint && opts_.warm_start_from_previous) {
    try {
      auto sol = pmp::solve_tpbvp(prob_, x0, t0, hint, opts_);
      if (sol.converged) return sol;
    } catch (const IntegrationDiverged&) {
    }
  }
  const auto schedule = pmp::MarchSchedule::uniform(target_, x0, std::max(1, opts_.march_steps));
  try {
    return pmp::space_march(prob_, x0, t0, schedule, opts_);
  } catch (const pmp::ContinuationFailed& e) {
    auto s = failed_solution();
    if (e.last_good()) s.march_log = e.last_good()->march_log;
    return s;
  }
}

pmp::TpbvpSolution CachingSolver::solve(const Vec& x0, double t0, const pmp::TpbvpSolution* hint) const {
  if (hint) return inner_->solve(x0, t0, hint);
  std::vector<double> key(x0.data(), x0.data() + x0.size());
  key.push_back(t0);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  auto sol = inner_->solve(x0, t0, nullptr);
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(std::move(key), sol);
  return sol;
}

std::size_t CachingSolver::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

long CachingSolver::cache_hits() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return hits_;
}

MlpLearner::MlpLearner(nn::MlpSpec spec, nn::TrainConfig cfg, bool finetune)
    : spec_(std::move(spec)), cfg_(cfg), finetune_(finetune) {}

ControllerPtr MlpLearner::fit(const Dataset& data, int /*iteration*/) {
  if (!norm_) norm_ = nn::Normalization::fit(data);
  const nn::MlpParams* init = finetune_ && last_ ? &*last_ : nullptr;
  auto result = nn::train(data, spec_, cfg_, norm_, init);
  last_ = result.controller->params();
  curves_.push_back(result.loss_curve);
  return result.controller;
}

namespace {

class SliceLinearController final : public ClosedLoopController {
 public:
  SliceLinearController(std::vector<double> times, std::vector<Mat> A, std::vector<Vec> b)
      : times_(std::move(times)), A_(std::move(A)), b_(std::move(b)) {}

  Vec evaluate(double t, const Vec& x) const override {
    if (times_.size() == 1 || t <= times_.front()) return A_.front() * x + b_.front();
    if (t >= times_.back()) return A_.back() * x + b_.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
    return ((1.0 - w) * A_[lo] + w * A_[hi]) * x + (1.0 - w) * b_[lo] + w * b_[hi];
  }

 private:
  std::vector<double> times_;
  std::vector<Mat> A_;
  std::vector<Vec> b_;
};

}  // namespace

ControllerPtr SliceLinearLearner::fit(const Dataset& data, int /*iteration*/) {
  if (data.empty()) throw DomainError("training data is empty");
  std::map<long, std::vector<std::size_t>> slices;
  for (std::size_t k = 0; k < data.size(); ++k) slices[std::lround(data.points[k].t / data.delta)].push_back(k);
  const auto n = data.points[0].x.size(), m = data.points[0].u.size();
  std::vector<double> times;
  std::vector<Mat> As;
  std::vector<Vec> bs;
  for (const auto& [idx, rows] : slices) {
    Mat X(static_cast<Eigen::Index>(rows.size()), n + 1);
    Mat U(static_cast<Eigen::Index>(rows.size()), m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& p = data.points[rows[r]];
      X.row(static_cast<Eigen::Index>(r)) << p.x.transpose(), 1.0;
      U.row(static_cast<Eigen::Index>(r)) = p.u.transpose();
    }
    if (rows.size() < static_cast<std::size_t>(n + 1))
      throw InsufficientData(static_cast<double>(idx) * data.delta, "time slice has fewer points than unknowns");
    const Mat coef = X.colPivHouseholderQr().solve(U);  // (n + 1) x m
    times.push_back(static_cast<double>(idx) * data.delta);
    As.push_back(coef.topRows(n).transpose());
    bs.push_back(coef.row(n).transpose());
  }
  return std::make_shared<SliceLinearController>(std::move(times), std::move(As), std::move(bs));
}

Strategy parse_strategy(const std::string& name) {
  if (name == "ivp") return Strategy::kIvp;
  if (name == "vanilla") return Strategy::kVanilla;
  if (name == "as_large_u") return Strategy::kLargeU;
  if (name == "as_large_v") return Strategy::kLargeV;
  if (name == "as_bad_v") return Strategy::kBadV;
  throw DomainError("unknown strategy: " + name);
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kIvp: return "ivp";
    case Strategy::kVanilla: return "vanilla";
    case Strategy::kLargeU: return "as_large_u";
    case Strategy::kLargeV: return "as_large_v";
    case Strategy::kBadV: return "as_bad_v";
  }
  return "?";
}

void BaselineConfig::validate() const {
  if (initial_batch < 1 || candidates_per_pick < 1) throw DomainError("baseline counts must be positive");
  for (int inc : increments)
    if (inc < 1) throw DomainError("baseline increments must be positive");
}

int BaselineConfig::total_paths() const {
  int total = initial_batch;
  for (int inc : increments) total += inc;
  return total;
}

long BaselineConfig::budget() const {
  long extra = 0;
  for (int inc : increments) extra += inc;
  const long per_pick = strategy == Strategy::kBadV ? candidates_per_pick : 1;
  return initial_batch + extra * per_pick;
}

int pick_argmax(const std::vector<double>& scores) {
  if (scores.empty()) throw DomainError("no candidates to pick from");
  int best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

double rollout_cost(const ControlProblem& problem, const ClosedLoopController& controller, const Vec& x0,
                    double dt) {
  try {
    const auto traj = integrate_ivp(problem, controller, x0, 0.0, problem.horizon, dt);
    const double c = evaluate_cost(problem, traj);
    return std::isfinite(c) ? c : kInf;
  } catch (const IntegrationDiverged&) {
    return kInf;
  }
}

SamplingRun ivp_enhanced(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                         const SamplerOptions& opts, const InitialSampler& sample, Rng& rng) {
  check_options(problem, opts);
  SamplingRun run;
  run.strategy = "ivp";
  run.grid = opts.grid;
  run.N = opts.N;
  run.delta = opts.delta;
  for (int j = 0; j < opts.N; ++j) run.initial_states.push_back(sample(rng));

  const double rollout_dt = opts.delta / opts.substeps;
  std::vector<pmp::TpbvpSolution> previous(static_cast<std::size_t>(opts.N));
  std::vector<bool> have_previous(static_cast<std::size_t>(opts.N), false);
  const int K = opts.grid.intervals();
  for (int i = 0; i < K; ++i) {
    IterationArtifacts it;
    it.iteration = i;
    it.knot = opts.grid.knots[static_cast<std::size_t>(i)];
    const double ti = it.knot;

    // Reach t_i under the previous controller.
    std::vector<Vec> reached(static_cast<std::size_t>(opts.N));
    std::vector<bool> ok(static_cast<std::size_t>(opts.N), true);
    if (i == 0) {
      reached = run.initial_states;
    } else {
      const ControllerRef ctrl(run.iterations.back().controller);
      parallel_for(static_cast<std::size_t>(opts.N), opts.threads, [&](std::size_t j) {
        try {
          reached[j] = integrate_ivp(problem, ctrl, run.initial_states[j], 0.0, ti, rollout_dt).states.back();
        } catch (const IntegrationDiverged&) {
          ok[j] = false;
        }
      });
    }
    std::vector<SolveJob> jobs;
    for (int j = 0; j < opts.N; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (!ok[ju]) {
        run.log.push_back("iteration " + std::to_string(i) + ": rollout of origin " + std::to_string(j) +
                          " diverged before t_i; skipped");
        continue;
      }
      it.reached.push_back(reached[ju]);
      it.reached_origin.push_back(j);
      const pmp::TpbvpSolution* hint =
          opts.warm_start_from_previous && have_previous[ju] ? &previous[ju] : nullptr;
      jobs.push_back({reached[ju], ti, j, hint});
    }
    const auto sols = run_solves(solver, jobs, i, opts.threads, run);
    const auto recs = tail_records(run, jobs.size());
    it.solves = static_cast<int>(jobs.size());
    for (std::size_t k = 0; k < sols.size(); ++k) {
      if (!sols[k].converged) continue;
      ++it.converged;
      const auto origin = static_cast<std::size_t>(jobs[k].origin);
      previous[origin] = sols[k];
      have_previous[origin] = true;
    }
    if (it.converged == 0) throw IterationStarved(i, "every open-loop solve failed at iteration " + std::to_string(i));

    // S_i = new data on [t_i, T] plus the t < t_i part of S_{i-1}.
    it.data = solutions_to_dataset(sols, recs, opts.delta);
    if (i > 0) {
      const Dataset& prev = run.iterations.back().data;
      for (std::size_t k = 0; k < prev.size(); ++k) {
        if (prev.points[k].t < ti - 1e-9 * std::max(1.0, ti)) {
          it.data.points.push_back(prev.points[k]);
          it.data.trajectory_ids.push_back(prev.trajectory_ids[k]);
          it.data.origins.push_back(prev.origins[k]);
        }
      }
    }
    it.controller = learner.fit(it.data, i);
    run.iterations.push_back(std::move(it));
  }
  return run;
}

SamplingRun vanilla(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                    const SamplerOptions& opts, int n_total, const InitialSampler& sample, Rng& rng) {
  check_options(problem, opts);
  if (n_total < 1) throw DomainError("vanilla sampling needs at least one path");
  SamplingRun run;
  run.strategy = "vanilla";
  run.grid = TemporalGrid({0.0, problem.horizon});
  run.N = n_total;
  run.delta = opts.delta;
  std::vector<SolveJob> jobs;
  for (int j = 0; j < n_total; ++j) {
    run.initial_states.push_back(sample(rng));
    jobs.push_back({run.initial_states.back(), 0.0, j, nullptr});
  }
  IterationArtifacts it;
  it.reached = run.initial_states;
  for (int j = 0; j < n_total; ++j) it.reached_origin.push_back(j);
  const auto sols = run_solves(solver, jobs, 0, opts.threads, run);
  const auto recs = tail_records(run, jobs.size());
  it.solves = n_total;
  for (const auto& s : sols) it.converged += s.converged ? 1 : 0;
  if (it.converged == 0) throw IterationStarved(0, "every open-loop solve failed");
  it.data = solutions_to_dataset(sols, recs, opts.delta);
  it.controller = learner.fit(it.data, 0);
  run.iterations.push_back(std::move(it));
  return run;
}

SamplingRun adaptive(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                     const SamplerOptions& opts, const BaselineConfig& cfg, const InitialSampler& sample, Rng& rng) {
  check_options(problem, opts);
  cfg.validate();
  if (cfg.strategy != Strategy::kLargeU && cfg.strategy != Strategy::kLargeV && cfg.strategy != Strategy::kBadV)
    throw DomainError("adaptive sampling needs as_large_u, as_large_v or as_bad_v");
  const double rollout_dt = opts.delta / opts.substeps;
  SamplingRun run;
  run.strategy = to_string(cfg.strategy);
  run.grid = TemporalGrid({0.0, problem.horizon});
  run.N = cfg.total_paths();
  run.delta = opts.delta;

  // Initial batch, as vanilla sampling.
  IterationArtifacts first;
  std::vector<SolveJob> jobs;
  for (int j = 0; j < cfg.initial_batch; ++j) {
    run.initial_states.push_back(sample(rng));
    jobs.push_back({run.initial_states.back(), 0.0, j, nullptr});
  }
  auto sols = run_solves(solver, jobs, 0, opts.threads, run);
  first.solves = cfg.initial_batch;
  for (const auto& s : sols) first.converged += s.converged ? 1 : 0;
  if (first.converged == 0) throw IterationStarved(0, "every open-loop solve of the initial batch failed");
  first.data = solutions_to_dataset(sols, tail_records(run, jobs.size()), opts.delta);
  first.reached = run.initial_states;
  for (int j = 0; j < cfg.initial_batch; ++j) first.reached_origin.push_back(j);
  first.controller = learner.fit(first.data, 0);
  run.iterations.push_back(std::move(first));

  for (std::size_t block = 0; block < cfg.increments.size(); ++block) {
    const int iteration = static_cast<int>(block) + 1;
    const int picks = cfg.increments[block];
    const ControllerRef ctrl(run.iterations.back().controller);
    const int c = cfg.candidates_per_pick;
    std::vector<Vec> candidates;
    for (int k = 0; k < picks * c; ++k) candidates.push_back(sample(rng));

    IterationArtifacts it;
    it.iteration = iteration;
    std::vector<int> chosen(static_cast<std::size_t>(picks));
    std::vector<pmp::TpbvpSolution> chosen_sols;
    std::vector<SolveRecord> chosen_recs;
    const int origin0 = static_cast<int>(run.initial_states.size());

    if (cfg.strategy == Strategy::kBadV) {
      std::vector<SolveJob> cjobs;
      for (int k = 0; k < picks * c; ++k) cjobs.push_back({candidates[static_cast<std::size_t>(k)], 0.0, origin0 + k, nullptr});
      const auto csols = run_solves(solver, cjobs, iteration, opts.threads, run);
      auto crecs = tail_records(run, cjobs.size());
      const auto costs = parallel_map<double>(candidates.size(), opts.threads, [&](std::size_t k) {
        return rollout_cost(problem, ctrl, candidates[k], rollout_dt);
      });
      for (int p = 0; p < picks; ++p) {
        std::vector<double> scores;
        for (int k = 0; k < c; ++k) {
          const auto idx = static_cast<std::size_t>(p * c + k);
          scores.push_back(csols[idx].converged ? costs[idx] - csols[idx].cost : -kInf);
        }
        chosen[static_cast<std::size_t>(p)] = p * c + pick_argmax(scores);
      }
      for (std::size_t k = 0; k < crecs.size(); ++k) {
        const bool keep = std::find(chosen.begin(), chosen.end(), static_cast<int>(k)) != chosen.end();
        run.solves[static_cast<std::size_t>(crecs[k].id)].used = keep;
        it.solves += 1;
        if (keep) {
          chosen_sols.push_back(csols[k]);
          chosen_recs.push_back(crecs[k]);
        }
      }
    } else {
      const auto scores_all = parallel_map<double>(candidates.size(), opts.threads, [&](std::size_t k) {
        if (cfg.strategy == Strategy::kLargeU) return ctrl.evaluate(0.0, candidates[k]).norm();
        return rollout_cost(problem, ctrl, candidates[k], rollout_dt);
      });
      std::vector<SolveJob> pjobs;
      for (int p = 0; p < picks; ++p) {
        std::vector<double> scores(scores_all.begin() + p * c, scores_all.begin() + (p + 1) * c);
        const int idx = p * c + pick_argmax(scores);
        chosen[static_cast<std::size_t>(p)] = idx;
        pjobs.push_back({candidates[static_cast<std::size_t>(idx)], 0.0, origin0 + idx, nullptr});
      }
      chosen_sols = run_solves(solver, pjobs, iteration, opts.threads, run);
      chosen_recs = tail_records(run, pjobs.size());
      it.solves = picks;
    }
    for (int k = 0; k < picks * c; ++k) run.initial_states.push_back(candidates[static_cast<std::size_t>(k)]);
    for (int idx : chosen) {
      it.reached.push_back(candidates[static_cast<std::size_t>(idx)]);
      it.reached_origin.push_back(origin0 + idx);
    }
    for (const auto& s : chosen_sols) it.converged += s.converged ? 1 : 0;
    it.data = run.iterations.back().data;
    merge_into(it.data, solutions_to_dataset(chosen_sols, chosen_recs, opts.delta));
    it.controller = learner.fit(it.data, iteration);
    run.iterations.push_back(std::move(it));
  }
  return run;
}

void write_solves_csv(std::ostream& os, const std::vector<SolveRecord>& solves) {
  os << "id,t0,converged,newton_iters,bc_residual,stationarity,cost\n" << std::setprecision(17);
  for (const auto& r : solves)
    os << r.id << ',' << r.t0 << ',' << (r.converged ? 1 : 0) << ',' << r.newton_iterations << ','
       << r.bc_residual << ',' << r.stationarity << ',' << r.cost << '\n';
}

}  // namespace ivps::sampler
