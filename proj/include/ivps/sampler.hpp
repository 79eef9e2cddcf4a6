#pragma once

// Data generation strategies for learning a closed-loop controller from
// open-loop optimal solutions: IVP-enhanced sampling on a temporal grid,
// plain (vanilla) sampling, and three adaptive baselines that choose new
// initial points by a score under the latest controller.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "ivps/control_core.hpp"
#include "ivps/nn.hpp"
#include "ivps/pmp.hpp"

namespace ivps::sampler {

using Rng = std::mt19937_64;
using ControllerPtr = std::shared_ptr<const ClosedLoopController>;

/// Produces an open-loop optimal solution on [t0, T] from x0. A solution
/// with converged == false signals failure; hint, when present, is an
/// earlier solution covering [t0, T] that may serve as an initial guess.
class OpenLoopSolver {
 public:
  virtual ~OpenLoopSolver() = default;
  virtual pmp::TpbvpSolution solve(const Vec& x0, double t0, const pmp::TpbvpSolution* hint) const = 0;
};

/// The PMP solver: warm start from the hint when allowed, otherwise (or when
/// that fails) space marching from the target with opts.march_steps steps.
class PmpOpenLoopSolver final : public OpenLoopSolver {
 public:
  PmpOpenLoopSolver(pmp::TpbvpProblem prob, pmp::SolverOptions opts, Vec target);
  pmp::TpbvpSolution solve(const Vec& x0, double t0, const pmp::TpbvpSolution* hint) const override;
  const pmp::TpbvpProblem& problem() const { return prob_; }
  const pmp::SolverOptions& options() const { return opts_; }

 private:
  pmp::TpbvpProblem prob_;
  pmp::SolverOptions opts_;
  Vec target_;
};

/// Memoises hint-free solves by (t0, x0) so that identical requests made by
/// different strategies or test-set evaluations are solved once.
class CachingSolver final : public OpenLoopSolver {
 public:
  explicit CachingSolver(std::shared_ptr<const OpenLoopSolver> inner) : inner_(std::move(inner)) {}
  pmp::TpbvpSolution solve(const Vec& x0, double t0, const pmp::TpbvpSolution* hint) const override;
  std::size_t cache_size() const;
  long cache_hits() const;

 private:
  std::shared_ptr<const OpenLoopSolver> inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<double>, pmp::TpbvpSolution> cache_;
  mutable long hits_ = 0;
};

/// Fits a controller to a dataset; may keep state across iterations.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual ControllerPtr fit(const Dataset& data, int iteration) = 0;
};

/// MLP learner: the normalisation is frozen from the first dataset it sees;
/// each fit retrains from the seeded initialisation unless finetune is set.
class MlpLearner final : public Learner {
 public:
  MlpLearner(nn::MlpSpec spec, nn::TrainConfig cfg, bool finetune = false);
  ControllerPtr fit(const Dataset& data, int iteration) override;
  const std::vector<std::vector<double>>& loss_curves() const { return curves_; }

 private:
  nn::MlpSpec spec_;
  nn::TrainConfig cfg_;
  bool finetune_;
  std::optional<nn::Normalization> norm_;
  std::optional<nn::MlpParams> last_;
  std::vector<std::vector<double>> curves_;
};

/// Least squares u ~ A(t) x + b(t) on every time slice of the dataset, with
/// the coefficients interpolated linearly in t. Used with linear dynamics.
class SliceLinearLearner final : public Learner {
 public:
  ControllerPtr fit(const Dataset& data, int iteration) override;
};

struct SolveRecord {
  int id = 0;
  int iteration = 0;
  int origin = 0;
  double t0 = 0.0;
  bool converged = false;
  int newton_iterations = 0;
  double bc_residual = 0.0;
  double stationarity = 0.0;
  double cost = 0.0;
  bool used = true;  // false for scored-but-discarded candidates
};

struct IterationArtifacts {
  int iteration = 0;
  double knot = 0.0;          // t_i for IVP-enhanced sampling, 0 otherwise
  Dataset data;
  ControllerPtr controller;
  std::vector<Vec> reached;   // X_i, one entry per surviving initial point
  std::vector<int> reached_origin;
  int solves = 0;
  int converged = 0;
};

struct SamplingRun {
  std::string strategy;
  TemporalGrid grid;
  int N = 0;
  double delta = 0.0;
  std::vector<Vec> initial_states;
  std::vector<IterationArtifacts> iterations;
  std::vector<SolveRecord> solves;
  long budget = 0;            // open-loop solves charged to the protocol
  std::vector<std::string> log;

  ControllerPtr controller() const { return iterations.back().controller; }
  const Dataset& dataset() const { return iterations.back().data; }
};

struct SamplerOptions {
  TemporalGrid grid;
  int N = 20;
  double delta = 0.2;
  int substeps = 20;          // exploration rollout step = delta / substeps
  int threads = 1;
  bool warm_start_from_previous = true;
};

enum class Strategy { kIvp, kVanilla, kLargeU, kLargeV, kBadV };
Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

struct BaselineConfig {
  Strategy strategy = Strategy::kLargeU;
  int initial_batch = 20;
  std::vector<int> increments{16, 12, 12};
  int candidates_per_pick = 2;

  void validate() const;
  int total_paths() const;
  /// Open-loop solves the protocol charges.
  long budget() const;
};

using InitialSampler = std::function<Vec(Rng&)>;

SamplingRun ivp_enhanced(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                         const SamplerOptions& opts, const InitialSampler& sample, Rng& rng);
SamplingRun vanilla(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                    const SamplerOptions& opts, int n_total, const InitialSampler& sample, Rng& rng);
/// as_large_u, as_large_v and as_bad_v, chosen by cfg.strategy.
SamplingRun adaptive(const ControlProblem& problem, const OpenLoopSolver& solver, Learner& learner,
                     const SamplerOptions& opts, const BaselineConfig& cfg, const InitialSampler& sample, Rng& rng);

/// Index of the largest score; ties go to the earliest candidate.
int pick_argmax(const std::vector<double>& scores);

/// Cost of the closed-loop rollout from (0, x0); +inf when it diverges.
double rollout_cost(const ControlProblem& problem, const ClosedLoopController& controller, const Vec& x0,
                    double dt);

/// Writes the per-solve diagnostics with header id,t0,converged,newton_iters,bc_residual,stationarity,cost.
void write_solves_csv(std::ostream& os, const std::vector<SolveRecord>& solves);

}  // namespace ivps::sampler
