#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaforge {

/// Outcome of the library's built-in gradient verification: routed analytic
/// gradients versus central finite differences over a population of random
/// small models (both head kinds, both encoder losses, scalar and patch
/// discriminators), plus the lambda=0 routing-isolation check.
struct GradcheckReport {
  int models = 0;
  int64_t params_checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;          // "model<i>/<parameter name>"
  std::vector<std::string> failures;  // offending parameters / routing breaks
  bool routing_ok = false;
  double tolerance = 1e-4;

  bool passed() const {
    return failures.empty() && routing_ok && max_rel_err < tolerance;
  }
};

/// Runs the verification on `num_models` randomly generated models derived
/// from `seed`. Every parameter element is perturbed both ways; the gradient
/// of each parameter group is compared against the finite difference of that
/// group's own routed objective. `corrupt` is a negative-control hook that
/// injects one wrong gradient value to prove the detector trips.
GradcheckReport run_gradcheck(uint64_t seed, int num_models = 20,
                              bool corrupt = false);

}  // namespace adaforge
