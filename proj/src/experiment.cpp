#include "ivps/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "ivps/errors.hpp"
#include "ivps/parallel.hpp"
#include "ivps/quadrotor.hpp"

namespace ivps::experiment {

namespace fs = std::filesystem;

namespace {

// splitmix64 finaliser; derives independent seeds from (seed, tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw DomainError("cannot write " + p.string());
  return os;
}

std::string fmt_t(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

lqr::LqrSpec theorem_spec(const LqrConfig& cfg) {
  lqr::LqrSpec spec;
  spec.T = cfg.T;
  spec.epsilon = cfg.epsilon;
  spec.N = cfg.N;
  spec.dt = cfg.dt;
  spec.validate();
  return spec;
}

const Theorem1Row& find_row(const std::vector<Theorem1Row>& rows, const std::string& q) {
  for (const auto& r : rows)
    if (r.quantity == q) return r;
  throw DomainError("missing row " + q);
}

void write_theorem1_csv(std::ostream& os, const std::vector<Theorem1Row>& rows) {
  os << "quantity,predicted,empirical,std_error\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.quantity << ',' << r.predicted << ',' << r.empirical << ',' << r.std_error << '\n';
}

}  // namespace

// ---- LQR -------------------------------------------------------------------

std::vector<Theorem1Row> theorem1_performance(const LqrConfig& cfg, std::uint64_t seed, int threads) {
  const auto spec = theorem_spec(cfg);
  const auto pred = lqr::theorem1_predictions(spec);
  std::vector<Theorem1Row> rows;
  for (auto method : {lqr::Method::kVanilla, lqr::Method::kIvpEnhanced}) {
    const lqr::ControllerFactory factory = [&](lqr::Rng rng) {
      return lqr::run_method(spec, method, lqr::Model::kModel1, std::move(rng)).controller;
    };
    const auto tag = method == lqr::Method::kVanilla ? 1u : 2u;
    const auto est = lqr::monte_carlo_perf_gap(factory, spec, cfg.realizations, cfg.eval_points,
                                               derive_seed(seed, tag), threads);
    Theorem1Row r;
    r.quantity = method == lqr::Method::kVanilla ? "vanilla_perf_gap" : "ivp_perf_gap";
    r.predicted = method == lqr::Method::kVanilla ? pred.vanilla_perf_gap : pred.ivp_perf_gap_exact;
    r.empirical = est.mean;
    r.std_error = est.std_error;
    rows.push_back(r);
  }
  rows.push_back({"ivp_perf_gap_bound", pred.ivp_perf_gap_bound, find_row(rows, "ivp_perf_gap").empirical,
                  find_row(rows, "ivp_perf_gap").std_error});
  return rows;
}

std::vector<Theorem1Row> theorem1_moments(const LqrConfig& cfg, std::uint64_t seed, int threads) {
  const auto spec = theorem_spec(cfg);
  std::vector<Theorem1Row> rows;
  for (auto method : {lqr::Method::kVanilla, lqr::Method::kIvpEnhanced}) {
    const auto tag = method == lqr::Method::kVanilla ? 3u : 4u;
    const auto est = lqr::moment_gap_experiment(spec, method, lqr::Model::kModel1, cfg.moment_times,
                                                cfg.moment_replicates, cfg.moment_eval_points,
                                                derive_seed(seed, tag), threads);
    for (const auto& m : est) {
      const std::string name = method == lqr::Method::kVanilla ? "vanilla_moment_gap_t=" : "ivp_moment_gap_t=";
      rows.push_back({name + fmt_t(m.t), m.predicted, m.empirical, m.std_error});
    }
  }
  return rows;
}

std::vector<GapRow> model2_sweep(const LqrConfig& cfg, std::uint64_t seed, int threads) {
  std::vector<GapRow> rows;
  for (int T : cfg.sweep_T) {
    lqr::LqrSpec spec;
    spec.T = T;
    spec.epsilon = cfg.epsilon;
    spec.N = cfg.sweep_N;
    spec.dt = cfg.dt;
    spec.validate();
    for (auto method : {lqr::Method::kVanilla, lqr::Method::kIvpEnhanced}) {
      const lqr::ControllerFactory factory = [&](lqr::Rng rng) {
        return lqr::run_method(spec, method, lqr::Model::kModel2, std::move(rng)).controller;
      };
      const std::uint64_t tag = 100 + 2 * static_cast<std::uint64_t>(T) + (method == lqr::Method::kVanilla ? 0 : 1);
      const auto est = lqr::monte_carlo_perf_gap(factory, spec, cfg.sweep_replicates, cfg.sweep_eval_points,
                                                 derive_seed(seed, tag), threads);
      rows.push_back({T, lqr::to_string(method), est.mean, est.std_error});
    }
  }
  return rows;
}

bool check_vanilla_perf(const std::vector<Theorem1Row>& rows) {
  const auto& r = find_row(rows, "vanilla_perf_gap");
  return std::abs(r.empirical - r.predicted) <= 3.0 * r.std_error;
}

bool check_ivp_perf(const std::vector<Theorem1Row>& rows) {
  const auto& r = find_row(rows, "ivp_perf_gap_bound");
  return r.empirical <= r.predicted + 3.0 * r.std_error;
}

bool check_vanilla_moments(const std::vector<Theorem1Row>& rows) {
  bool ok = false;
  for (const auto& r : rows) {
    if (r.quantity.rfind("vanilla_moment_gap", 0) != 0) continue;
    if (std::abs(r.empirical - r.predicted) > 3.0 * r.std_error) return false;
    ok = true;
  }
  return ok;
}

bool check_ivp_moments(const std::vector<Theorem1Row>& rows, const LqrConfig& cfg) {
  bool ok = false;
  const double bound = cfg.epsilon * cfg.epsilon;
  for (const auto& r : rows) {
    if (r.quantity.rfind("ivp_moment_gap", 0) != 0) continue;
    if (r.empirical > bound + 3.0 * r.std_error) return false;
    ok = true;
  }
  return ok;
}

bool check_sweep_trend(const std::vector<GapRow>& rows) {
  auto gap = [&](const std::string& method, bool largest) {
    const GapRow* best = nullptr;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      if (!best || (largest ? r.T > best->T : r.T < best->T)) best = &r;
    }
    if (!best) throw DomainError("sweep has no rows for " + method);
    return best->gap;
  };
  const std::string v = lqr::to_string(lqr::Method::kVanilla), a = lqr::to_string(lqr::Method::kIvpEnhanced);
  return gap(v, true) > 4.0 * gap(v, false) && gap(a, true) < 3.0 * gap(a, false);
}

int cmd_lqr(const ExperimentConfig& cfg, bool check, std::ostream& log) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  {
    auto os = open_out(out / "config.echo");
    write_config(os, cfg);
  }
  const int threads = resolve_threads(cfg.threads);

  log << "lqr: performance gaps (" << cfg.lqr.realizations << " realizations)\n";
  auto rows = theorem1_performance(cfg.lqr, cfg.seed, threads);
  log << "lqr: moment gaps\n";
  const auto moments = theorem1_moments(cfg.lqr, cfg.seed, threads);
  rows.insert(rows.end(), moments.begin(), moments.end());
  {
    auto os = open_out(out / "theorem1.csv");
    write_theorem1_csv(os, rows);
  }
  log << "lqr: Model-2 sweep over T\n";
  const auto sweep = model2_sweep(cfg.lqr, cfg.seed, threads);
  {
    auto os = open_out(out / "model2_gap_vs_T.csv");
    os << "T,method,gap,std_error\n" << std::setprecision(17);
    for (const auto& r : sweep) os << r.T << ',' << r.method << ',' << r.gap << ',' << r.std_error << '\n';
  }

  // One training realisation per (method, model) and the paths they steer from path_x0.
  const auto spec = theorem_spec(cfg.lqr);
  std::vector<std::pair<std::string, std::shared_ptr<const lqr::LqrController>>> ctrls;
  ctrls.emplace_back("optimal", std::make_shared<lqr::LqrController>(lqr::LqrController::optimal(spec.T, spec.dt)));
  for (auto model : {lqr::Model::kModel1, lqr::Model::kModel2})
    for (auto method : {lqr::Method::kVanilla, lqr::Method::kIvpEnhanced}) {
      auto run = lqr::run_method(spec, method, model, lqr::Rng(derive_seed(cfg.seed, 5)));
      ctrls.emplace_back(lqr::to_string(method) + "_" + lqr::to_string(model), run.controller);
    }
  {
    std::vector<lqr::ScalarRollout> paths;
    for (const auto& c : ctrls) paths.push_back(lqr::rollout(*c.second, cfg.lqr.path_x0, 0.0, spec.T, spec.dt));
    auto os = open_out(out / "paths.csv");
    os << "t";
    for (const auto& c : ctrls) os << ',' << c.first;
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < paths[0].x.size(); ++k) {
      os << spec.node_time(static_cast<long>(k));
      for (const auto& p : paths) os << ',' << p.x[k];
      os << '\n';
    }
  }

  LqrChecks c;
  c.vanilla_perf = check_vanilla_perf(rows);
  c.ivp_perf = check_ivp_perf(rows);
  c.vanilla_moment = check_vanilla_moments(rows);
  c.ivp_moment = check_ivp_moments(rows, cfg.lqr);
  c.sweep_trend = check_sweep_trend(sweep);
  {
    auto os = open_out(out / "manifest.txt");
    os << "benchmark=lqr\nseed=" << cfg.seed << "\nfiles=theorem1.csv,model2_gap_vs_T.csv,paths.csv,config.echo\n";
    os << "check.vanilla_perf=" << c.vanilla_perf << "\ncheck.ivp_perf=" << c.ivp_perf
       << "\ncheck.vanilla_moment=" << c.vanilla_moment << "\ncheck.ivp_moment=" << c.ivp_moment
       << "\ncheck.sweep_trend=" << c.sweep_trend << '\n';
  }
  log << std::setprecision(6);
  for (const auto& r : rows)
    log << "  " << r.quantity << ": predicted " << r.predicted << ", empirical " << r.empirical << " +- "
        << r.std_error << '\n';
  for (const auto& r : sweep) log << "  T=" << r.T << ' ' << r.method << ": gap " << r.gap << " +- " << r.std_error << '\n';
  if (!check) return 0;
  const bool all = c.vanilla_perf && c.ivp_perf && c.vanilla_moment && c.ivp_moment && c.sweep_trend;
  log << "check: vanilla_perf=" << c.vanilla_perf << " ivp_perf=" << c.ivp_perf
      << " vanilla_moment=" << c.vanilla_moment << " ivp_moment=" << c.ivp_moment
      << " sweep_trend=" << c.sweep_trend << '\n';
  return all ? 0 : 1;
}

// ---- Quadrotor -------------------------------------------------------------

QuadSetup make_quad_setup(const ExperimentConfig& cfg) {
  QuadSetup s;
  const auto& q = cfg.quadrotor;
  const auto cost = quad::LandingCost::standard(q.params);
  s.problem = quad::make_landing_problem(q.params, cost, q.horizon);
  auto tpbvp = quad::make_landing_tpbvp(q.params, cost, q.horizon);
  auto opts = cfg.solver;
  opts.warm_start_from_previous = cfg.sampler.warm_start_from_previous;
  auto inner = std::make_shared<sampler::PmpOpenLoopSolver>(std::move(tpbvp), opts, Vec::Zero(quad::kStateDim));
  s.solver = std::make_shared<sampler::CachingSolver>(inner);
  s.box = q.initial_box();

  sampler::Rng rng(derive_seed(cfg.seed, 77));
  for (int k = 0; k < cfg.sampler.test; ++k) s.test_states.push_back(quad::sample_initial(s.box, rng).pack());
  const auto sols = parallel_map<pmp::TpbvpSolution>(s.test_states.size(), resolve_threads(cfg.threads),
                                                     [&](std::size_t k) {
                                                       return s.solver->solve(s.test_states[k], 0.0, nullptr);
                                                     });
  for (std::size_t k = 0; k < sols.size(); ++k) {
    if (sols[k].converged) s.test_refs.push_back(sols[k]);
    else s.log.push_back("test state " + std::to_string(k) + " has no converged optimal solution; excluded");
  }
  if (s.test_refs.empty()) throw IterationStarved(0, "no test state has a converged optimal solution");
  return s;
}

StrategyResult run_quad_strategy(const QuadSetup& setup, const ExperimentConfig& cfg, sampler::Strategy strategy,
                                 bool with_mismatch) {
  const int threads = resolve_threads(cfg.threads);
  auto train = cfg.nn.train;
  train.seed = derive_seed(cfg.seed, 1000 + train.seed);
  sampler::MlpLearner learner(cfg.mlp_spec(1 + quad::kStateDim, quad::kControlDim), train, cfg.nn.finetune);

  sampler::SamplerOptions opts;
  opts.grid = TemporalGrid(cfg.sampler.grid);
  opts.N = cfg.sampler.N;
  opts.delta = cfg.sampler.delta;
  opts.substeps = cfg.sampler.substeps;
  opts.threads = threads;
  opts.warm_start_from_previous = cfg.sampler.warm_start_from_previous;
  const auto box = setup.box;
  const sampler::InitialSampler sample = [box](sampler::Rng& r) { return quad::sample_initial(box, r).pack(); };
  sampler::Rng rng(derive_seed(cfg.seed, 11));

  StrategyResult res;
  switch (strategy) {
    case sampler::Strategy::kIvp:
      res.run = sampler::ivp_enhanced(setup.problem, *setup.solver, learner, opts, sample, rng);
      break;
    case sampler::Strategy::kVanilla:
      res.run = sampler::vanilla(setup.problem, *setup.solver, learner, opts, opts.N * opts.grid.intervals(), sample,
                                 rng);
      break;
    default: {
      sampler::BaselineConfig b;
      b.strategy = strategy;
      b.initial_batch = cfg.sampler.initial_batch;
      b.increments = cfg.sampler.increments;
      b.candidates_per_pick = cfg.sampler.candidates_per_pick;
      res.run = sampler::adaptive(setup.problem, *setup.solver, learner, opts, b, sample, rng);
    }
  }
  res.loss_curves = learner.loss_curves();
  for (const auto& it : res.run.iterations) {
    res.ratios.push_back(metrics::cost_ratio_table(setup.problem, *it.controller, setup.test_refs,
                                                   cfg.metrics.rollout_dt, threads));
    if (with_mismatch)
      res.mismatch.push_back(metrics::mismatch_curve(setup.problem, *it.controller, it.data, res.run.initial_states,
                                                     cfg.metrics.rollout_dt, threads));
  }
  return res;
}

int cmd_quadrotor(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  {
    auto os = open_out(out / "config.echo");
    write_config(os, cfg);
  }
  const int threads = resolve_threads(cfg.threads);
  const auto strategy = sampler::parse_strategy(cfg.strategy);
  log << "quadrotor: solving " << cfg.sampler.test << " test problems\n";
  const QuadSetup setup = make_quad_setup(cfg);
  log << "quadrotor: running " << cfg.strategy << '\n';
  const StrategyResult res = run_quad_strategy(setup, cfg, strategy, cfg.metrics.mismatch);
  const auto& run = res.run;

  std::vector<std::string> files{"config.echo", "solves.csv", "ratios.csv", "summary.csv", "cdf.csv"};
  {
    auto os = open_out(out / "solves.csv");
    sampler::write_solves_csv(os, run.solves);
  }
  for (std::size_t i = 0; i < run.iterations.size(); ++i) {
    const auto& it = run.iterations[i];
    const std::string ds = "dataset_iter" + std::to_string(i) + ".csv";
    const std::string ctrl = "controller_iter" + std::to_string(i) + ".json";
    {
      auto os = open_out(out / ds);
      write_dataset_csv(os, it.data);
    }
    if (auto mlp = std::dynamic_pointer_cast<const nn::MlpController>(it.controller)) mlp->save_file((out / ctrl).string());
    files.push_back(ds);
    files.push_back(ctrl);
    if (!res.mismatch.empty()) {
      const std::string mm = "mismatch_iter" + std::to_string(i) + ".csv";
      auto os = open_out(out / mm);
      metrics::write_mismatch_csv(os, res.mismatch[i]);
      files.push_back(mm);
    }
  }
  if (!res.mismatch.empty()) {
    auto os = open_out(out / "mismatch.csv");
    metrics::write_mismatch_csv(os, res.mismatch.back());
    files.push_back("mismatch.csv");
  }
  const auto& final_ratios = res.ratios.back();
  {
    auto os = open_out(out / "ratios.csv");
    metrics::write_ratios_csv(os, final_ratios.ratios);
  }
  {
    auto os = open_out(out / "cdf.csv");
    metrics::write_cdf_csv(os, final_ratios.ratios);
  }
  {
    auto os = open_out(out / "summary.csv");
    metrics::write_summary_header(os);
    for (std::size_t i = 0; i < res.ratios.size(); ++i)
      metrics::write_summary_row(os, cfg.strategy + "_iter" + std::to_string(i), res.ratios[i].summary);
    metrics::write_summary_row(os, "final", final_ratios.summary);
    const auto& ctrl = *run.controller();
    for (double sigma : cfg.metrics.sigmas) {
      const auto nn_t = metrics::disturbance_eval(setup.problem, ctrl, setup.test_refs, sigma,
                                                  cfg.metrics.disturbance_trials, cfg.metrics.rollout_dt,
                                                  derive_seed(cfg.seed, 500), threads);
      metrics::write_summary_row(os, "nn_sigma=" + fmt_t(sigma), nn_t.summary);
      const auto ol = metrics::open_loop_time_disturbance(setup.problem, setup.test_refs, sigma,
                                                          cfg.metrics.disturbance_trials, cfg.metrics.rollout_dt,
                                                          derive_seed(cfg.seed, 501), threads);
      metrics::write_summary_row(os, "open_loop_sigma=" + fmt_t(sigma), ol.summary);
    }
  }
  {
    auto os = open_out(out / "manifest.txt");
    os << std::setprecision(17);
    os << "benchmark=quadrotor\nstrategy=" << cfg.strategy << "\nseed=" << cfg.seed << "\nbudget=" << run.budget
       << "\ntest_refs=" << setup.test_refs.size() << "\niterations=" << run.iterations.size() << '\n';
    for (std::size_t i = 0; i < run.iterations.size(); ++i) {
      const auto& it = run.iterations[i];
      os << "iteration." << i << ".knot=" << it.knot << '\n'
         << "iteration." << i << ".dataset_size=" << it.data.size() << '\n'
         << "iteration." << i << ".solves=" << it.solves << '\n'
         << "iteration." << i << ".converged=" << it.converged << '\n'
         << "iteration." << i << ".mean_ratio=" << res.ratios[i].summary.mean << '\n'
         << "iteration." << i << ".final_loss="
         << (i < res.loss_curves.size() && !res.loss_curves[i].empty() ? res.loss_curves[i].back() : 0.0) << '\n';
    }
    os << "files=";
    for (std::size_t k = 0; k < files.size(); ++k) os << (k ? "," : "") << files[k];
    os << '\n';
    for (const auto& l : setup.log) os << "note=" << l << '\n';
    for (const auto& l : run.log) os << "note=" << l << '\n';
  }
  log << std::setprecision(6);
  for (std::size_t i = 0; i < res.ratios.size(); ++i) {
    const auto& s = res.ratios[i].summary;
    log << "  iteration " << i << ": mean ratio " << s.mean << ", median " << s.median << ", diverged " << s.diverged
        << '\n';
  }
  log << "  open-loop solves charged: " << run.budget << '\n';
  return 0;
}

// ---- Report ----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir, std::ostream& log) {
  if (run_dirs.empty()) {
    log << "report: no run directories given\n";
    return 2;
  }
  struct Run {
    std::string label;
    std::string header;
    std::vector<std::string> rows;
    std::string strategy;
  };
  std::vector<Run> runs;
  for (const auto& d : run_dirs) {
    const fs::path dir(d);
    if (!fs::is_directory(dir)) {
      log << "report: " << d << " is not a directory\n";
      return 2;
    }
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) {
      log << "report: " << d << " has no manifest.txt\n";
      return 2;
    }
    Run r;
    r.label = fs::weakly_canonical(dir).filename().string();
    std::string line;
    while (std::getline(manifest, line))
      if (line.rfind("strategy=", 0) == 0) r.strategy = line.substr(9);
    std::ifstream summary(dir / "summary.csv");
    if (!summary) {
      log << "report: " << d << " has no summary.csv\n";
      return 2;
    }
    std::getline(summary, r.header);
    while (std::getline(summary, line))
      if (!line.empty()) r.rows.push_back(line);
    runs.push_back(std::move(r));
  }
  std::stable_sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) {
    return std::tie(a.label, a.strategy, a.rows) < std::tie(b.label, b.strategy, b.rows);
  });
  for (const auto& r : runs)
    if (r.header != runs.front().header) {
      log << "report: summary headers differ between runs\n";
      return 2;
    }

  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "summary.csv");
  std::ofstream txt(fs::path(out_dir) / "report.txt");
  if (!os || !txt) {
    log << "report: cannot write to " << out_dir << '\n';
    return 2;
  }
  os << runs.front().header << '\n';
  for (const auto& r : runs)
    for (const auto& row : r.rows) os << (runs.size() > 1 ? r.label + "/" : std::string()) << row << '\n';
  for (const auto& r : runs) {
    for (const auto& row : r.rows) {
      if (row.rfind("final,", 0) != 0) continue;
      std::istringstream cells(row);
      std::vector<std::string> c;
      std::string cell;
      while (std::getline(cells, cell, ',')) c.push_back(cell);
      txt << r.label << " (" << (r.strategy.empty() ? "?" : r.strategy) << "): mean " << c[1] << ", median " << c[6]
          << ", max " << c[3] << ", diverged " << c[7] << '\n';
    }
  }
  txt.close();
  std::ifstream back(fs::path(out_dir) / "report.txt");
  log << back.rdbuf();
  return 0;
}

}  // namespace ivps::experiment
