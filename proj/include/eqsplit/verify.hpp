#pragma once

#include <string>
#include <vector>

namespace eqsplit {

struct CheckResult {
  std::string name;
  double observed = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  bool pass() const {
    for (const auto& check : checks)
      if (!check.pass) return false;
    return !checks.empty();
  }
};

// Property suites; each runs its full set of checks and reports residuals.
SuiteReport verify_groups();
SuiteReport verify_equivariance();
SuiteReport verify_reduction();
SuiteReport verify_mmse();
SuiteReport verify_qrank();
SuiteReport verify_aggregation();
SuiteReport verify_r2r();
SuiteReport verify_gradcheck();

// Dispatch by suite name; throws on unknown names.
SuiteReport run_suite(const std::string& name);

void write_suite_csv(const SuiteReport& report, const std::string& path);

}  // namespace eqsplit
