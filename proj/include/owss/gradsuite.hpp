#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace owss {

// Finite-difference verification of every training loss and of the full
// dual-decoder loss through the real model, over seeded random instances.
struct GradSuiteResult {
  struct Case {
    std::string name;
    double max_err = 0;
    double tolerance = 1e-5;
    bool pass = false;
  };
  std::vector<Case> cases;
  bool pass = false;
};

// `corrupt` deliberately breaks one backward rule so the sweep must fail;
// used to verify that the harness detects wrong gradients.
GradSuiteResult run_gradient_suite(int instances, uint64_t seed,
                                   bool corrupt = false);

std::string format_gradient_report(const GradSuiteResult& result);

}  // namespace owss
