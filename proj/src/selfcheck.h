#pragma once

#include <string>
#include <vector>

namespace cbn {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // worst error observed, or the failure message
};

// Runs the built-in invariant checks (transform oracles, convolution theorem,
// TE structure, gradient spot check, construction costs, checkpoint round
// trip). fast runs smaller instances of the randomized checks.
std::vector<CheckResult> run_selfchecks(bool fast);

}  // namespace cbn
