#include "common.hpp"

#include <cstdio>
#include <iostream>

namespace acceptance {

void Reporter::report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures_;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << detail << std::endl;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string config_dir() { return IVPS_CONFIG_DIR; }

}  // namespace acceptance
