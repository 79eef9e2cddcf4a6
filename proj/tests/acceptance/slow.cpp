// Criterion 10: IVP-enhanced sampling against the baselines at equal solve
// budgets on the desk-scale quadrotor.

#include <iostream>
#include <string>

#include "common.hpp"
#include "ivps/config.hpp"
#include "ivps/experiment.hpp"

using namespace ivps;
using acceptance::num;

int main() {
  acceptance::Reporter rep;
  const auto cfg = load_config(acceptance::config_dir() + "/desk.ini");
  const auto setup = experiment::make_quad_setup(cfg);

  double ivp = 0.0;
  bool ok = true;
  std::string detail;
  for (auto s : {sampler::Strategy::kIvp, sampler::Strategy::kVanilla, sampler::Strategy::kLargeU,
                 sampler::Strategy::kLargeV, sampler::Strategy::kBadV}) {
    const auto res = experiment::run_quad_strategy(setup, cfg, s, false);
    const double mean = res.ratios.back().summary.mean;
    std::cout << "  " << sampler::to_string(s) << ": budget " << res.run.budget << ", final mean ratio " << num(mean)
              << std::endl;
    if (s == sampler::Strategy::kIvp) ivp = mean;
    else ok = ok && ivp <= mean;
    detail += sampler::to_string(s) + " " + num(mean) + "; ";
  }
  rep.report(10, "baseline comparison", ok, detail);
  return rep.exit_code();
}
