#include "ivps/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "ivps/errors.hpp"

namespace ivps {

namespace {

struct Entry {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (trim(s.substr(pos)) != "") throw DomainError("not a number: " + s);
  return v;
}

long long to_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (trim(s.substr(pos)) != "") throw DomainError("not an integer: " + s);
  return v;
}

bool to_bool(const std::string& s) {
  const std::string v = trim(s);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DomainError("not a boolean: " + s);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

Entry dbl(std::string sec, std::string key, double& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = to_double(s); },
          [&ref] { return fmt(ref); }};
}

template <class I>
Entry integer(std::string sec, std::string key, I& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = static_cast<I>(to_int(s)); },
          [&ref] { return std::to_string(ref); }};
}

Entry boolean(std::string sec, std::string key, bool& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = to_bool(s); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Entry str(std::string sec, std::string key, std::string& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = trim(s); }, [&ref] { return ref; }};
}

Entry dlist(std::string sec, std::string key, std::vector<double>& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = parse_double_list(s); },
          [&ref] { return join(ref); }};
}

Entry ilist(std::string sec, std::string key, std::vector<int>& ref) {
  return {std::move(sec), std::move(key), [&ref](const std::string& s) { ref = parse_int_list(s); },
          [&ref] { return join(ref); }};
}

std::vector<Entry> registry(ExperimentConfig& c) {
  auto& l = c.lqr;
  auto& q = c.quadrotor;
  auto& s = c.sampler;
  auto& n = c.nn;
  auto& o = c.solver;
  auto& m = c.metrics;
  return {
      str("experiment", "benchmark", c.benchmark),
      str("experiment", "strategy", c.strategy),
      integer("experiment", "seed", c.seed),
      integer("experiment", "threads", c.threads),
      str("experiment", "out", c.out),
      integer("lqr", "T", l.T),
      dbl("lqr", "epsilon", l.epsilon),
      integer("lqr", "N", l.N),
      dbl("lqr", "dt", l.dt),
      integer("lqr", "realizations", l.realizations),
      integer("lqr", "eval_points", l.eval_points),
      integer("lqr", "moment_replicates", l.moment_replicates),
      integer("lqr", "moment_eval_points", l.moment_eval_points),
      dlist("lqr", "moment_times", l.moment_times),
      ilist("lqr", "sweep_T", l.sweep_T),
      integer("lqr", "sweep_N", l.sweep_N),
      integer("lqr", "sweep_replicates", l.sweep_replicates),
      integer("lqr", "sweep_eval_points", l.sweep_eval_points),
      dbl("lqr", "path_x0", l.path_x0),
      dbl("quadrotor", "m", q.params.m),
      dbl("quadrotor", "Jx", q.params.J[0]),
      dbl("quadrotor", "Jy", q.params.J[1]),
      dbl("quadrotor", "Jz", q.params.J[2]),
      dbl("quadrotor", "g", q.params.g),
      dbl("quadrotor", "l", q.params.l),
      dbl("quadrotor", "c", q.params.c),
      dbl("quadrotor", "horizon", q.horizon),
      str("quadrotor", "box", q.box),
      dbl("quadrotor", "position_scale", q.position_scale),
      dbl("quadrotor", "angle_scale", q.angle_scale),
      dlist("sampler", "grid", s.grid),
      integer("sampler", "N", s.N),
      integer("sampler", "test", s.test),
      dbl("sampler", "delta", s.delta),
      integer("sampler", "substeps", s.substeps),
      integer("sampler", "initial_batch", s.initial_batch),
      ilist("sampler", "increments", s.increments),
      integer("sampler", "candidates_per_pick", s.candidates_per_pick),
      boolean("sampler", "warm_start_from_previous", s.warm_start_from_previous),
      ilist("nn", "hidden", n.hidden),
      str("nn", "activation", n.activation),
      dbl("nn", "learning_rate", n.train.learning_rate),
      dbl("nn", "adam_beta1", n.train.adam_beta1),
      dbl("nn", "adam_beta2", n.train.adam_beta2),
      dbl("nn", "adam_eps", n.train.adam_eps),
      integer("nn", "batch_size", n.train.batch_size),
      integer("nn", "epochs", n.train.epochs),
      integer("nn", "seed", n.train.seed),
      dbl("nn", "holdout", n.train.holdout),
      boolean("nn", "finetune", n.finetune),
      dbl("solver", "dt", o.dt),
      integer("solver", "segments", o.segments),
      integer("solver", "max_newton_iterations", o.max_newton_iterations),
      dbl("solver", "tol_bc", o.tol_bc),
      dbl("solver", "tol_stationarity", o.tol_stationarity),
      dbl("solver", "tol_defect", o.tol_defect),
      dbl("solver", "fd_step", o.fd_step),
      integer("solver", "march_steps", o.march_steps),
      dlist("metrics", "sigmas", m.sigmas),
      integer("metrics", "disturbance_trials", m.disturbance_trials),
      dbl("metrics", "rollout_dt", m.rollout_dt),
      boolean("metrics", "mismatch", m.mismatch),
  };
}

}  // namespace

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ','))
    if (!trim(cell).empty()) out.push_back(to_double(trim(cell)));
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ','))
    if (!trim(cell).empty()) out.push_back(static_cast<int>(to_int(trim(cell))));
  return out;
}

quad::InitialBox QuadConfig::initial_box() const {
  if (box == "paper") return quad::InitialBox::paper();
  if (box == "desk") return quad::InitialBox::scaled(position_scale, angle_scale);
  throw DomainError("unknown initial box: " + box);
}

void ExperimentConfig::validate() const {
  if (benchmark != "lqr" && benchmark != "quadrotor") throw DomainError("benchmark must be lqr or quadrotor");
  sampler::parse_strategy(strategy);
  if (lqr.T < 1 || lqr.N < 1 || !(lqr.epsilon >= 0.0) || !(lqr.dt > 0.0)) throw DomainError("invalid [lqr] values");
  for (int T : lqr.sweep_T)
    if (T < 1) throw DomainError("sweep horizons must be positive");
  quadrotor.params.validate();
  quadrotor.initial_box().validate();
  if (sampler.grid.size() < 2 || sampler.grid.front() != 0.0 ||
      std::abs(sampler.grid.back() - quadrotor.horizon) > kTimeEps)
    throw DomainError("sampler grid must run from 0 to the quadrotor horizon");
  TemporalGrid check(sampler.grid);
  if (sampler.N < 1 || sampler.test < 1 || sampler.initial_batch < 1 || sampler.candidates_per_pick < 1)
    throw DomainError("sampler counts must be positive");
  for (int inc : sampler.increments)
    if (inc < 1) throw DomainError("sampler increments must be positive");
  nn::parse_activation(nn.activation);
  nn.train.validate();
  if (!(solver.dt > 0.0) || solver.segments < 1 || solver.march_steps < 1) throw DomainError("invalid [solver] values");
  if (!(metrics.rollout_dt > 0.0) || metrics.disturbance_trials < 1) throw DomainError("invalid [metrics] values");
}

nn::MlpSpec ExperimentConfig::mlp_spec(int input_dim, int output_dim) const {
  nn::MlpSpec spec;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.hidden = nn.hidden;
  spec.activations.assign(nn.hidden.size(), nn::parse_activation(nn.activation));
  return spec;
}

ExperimentConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw DomainError(std::string("cannot parse config: ") + e.what());
  }
  ExperimentConfig cfg;
  auto reg = registry(cfg);
  for (const auto& [section, keys] : tree) {
    for (const auto& [key, value] : keys) {
      bool found = false;
      for (auto& e : reg) {
        if (e.section == section && e.key == key) {
          try {
            e.set(value.data());
          } catch (const std::invalid_argument&) {
            throw DomainError("bad value for " + section + "." + key + ": " + value.data());
          } catch (const std::out_of_range&) {
            throw DomainError("value out of range for " + section + "." + key);
          }
          found = true;
          break;
        }
      }
      if (!found) throw DomainError("unknown config key " + section + "." + key);
    }
  }
  cfg.solver.warm_start_from_previous = cfg.sampler.warm_start_from_previous;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open config " + path);
  return parse_config(is);
}

void write_config(std::ostream& os, const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  const auto reg = registry(copy);
  std::string current;
  for (const auto& e : reg) {
    if (e.section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << e.section << "]\n";
      current = e.section;
    }
    os << e.key << " = " << e.get() << '\n';
  }
}

}  // namespace ivps
