#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cafm::gradcheck {

// One named check with the worst error it measured and the threshold it was
// judged against. Finite-difference checks report a guarded relative error
// (|analytic - fd| / max(1, |fd|)); the statistical policy-gradient check
// reports the worst |z|-score.
struct CheckResult {
  std::string name;
  double max_err = 0.0;
  double tol = 0.0;
  bool passed = false;
  std::string detail;
};

// Central finite differences (h = 1e-5) against the tape gradient for every
// primitive op, over `seeds` random shapes and values per op.
std::vector<CheckResult> check_primitive_ops(std::size_t seeds, std::uint64_t seed);

// End-to-end compositions checked the same way: the velocity network
// (every parameter, input, and time coordinate) and a recorded multi-step
// Euler rollout differentiated through all steps.
std::vector<CheckResult> check_composites(std::uint64_t seed);

// One-step Gaussian toy with a half-line constraint: the score-function
// gradient averaged over `trajectories` paths must lie within `z_tol`
// standard errors of the closed-form derivatives of P(x1 >= a), for
// `triples` random (mu, sigma, a) settings.
struct PgCheckConfig {
  std::size_t triples = 5;
  std::size_t trajectories = 100000;
  double z_tol = 3.0;
};
CheckResult check_policy_gradient(std::uint64_t seed, const PgCheckConfig& cfg = {});

// Full suite: primitive ops, composites, then the policy-gradient check.
std::vector<CheckResult> run_all(std::uint64_t seed, std::size_t seeds_per_op = 100,
                                 const PgCheckConfig& pg = {});
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace cafm::gradcheck
