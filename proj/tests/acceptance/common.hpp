#pragma once

// PASS/FAIL reporting shared by the acceptance binaries.

#include <string>

namespace acceptance {

class Reporter {
 public:
  /// Prints "PASS <id> <name>: <detail>" or "FAIL ...".
  void report(int id, const std::string& name, bool pass, const std::string& detail);
  int failures() const { return failures_; }
  int exit_code() const { return failures_ == 0 ? 0 : 1; }

 private:
  int failures_ = 0;
};

/// Fixed scientific formatting for details.
std::string num(double v);

/// Directory holding the shipped configs.
std::string config_dir();

}  // namespace acceptance
