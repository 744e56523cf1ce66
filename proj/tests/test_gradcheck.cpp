#include <string>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/gradcheck.hpp"
#include "doctest.h"

using namespace cafm;
using namespace cafm::gradcheck;

namespace {

const CheckResult* find_check(const std::vector<CheckResult>& rs, const std::string& name) {
  for (const CheckResult& r : rs)
    if (r.name == name) return &r;
  return nullptr;
}

// Restores the clean backward rules even if a CHECK throws mid-test.
struct MutationGuard {
  ~MutationGuard() { ad::set_grad_mutation(ad::GradMutation::None); }
};

}  // namespace

TEST_SUITE("gradcheck") {

TEST_CASE("every primitive op passes finite differences on a clean build") {
  const std::vector<CheckResult> rs = check_primitive_ops(25, 7);
  REQUIRE(rs.size() == 20);
  for (const CheckResult& r : rs) {
    INFO(r.name, " err=", r.max_err);
    CHECK(r.passed);
    CHECK(r.max_err <= r.tol);
    CHECK(r.tol == 1e-5);
  }
  for (const char* name : {"add", "matmul", "affine", "tanh", "relu", "exp", "log",
                           "gaussian_log_pdf", "time_embed", "concat", "slice", "sum"})
    CHECK(find_check(rs, name) != nullptr);
}

TEST_CASE("velocity network and unrolled rollout pass finite differences") {
  const std::vector<CheckResult> rs = check_composites(11);
  REQUIRE(rs.size() == 2);
  const CheckResult* net = find_check(rs, "velocity_net");
  const CheckResult* roll = find_check(rs, "euler_rollout");
  REQUIRE(net != nullptr);
  REQUIRE(roll != nullptr);
  INFO("net err=", net->max_err, " roll err=", roll->max_err);
  CHECK(net->passed);
  CHECK(roll->passed);
  CHECK(net->detail.find("coordinates") != std::string::npos);
}

TEST_CASE("score-function gradient matches the gaussian closed form within 3 SE") {
  PgCheckConfig cfg;
  cfg.triples = 3;
  cfg.trajectories = 20000;
  const CheckResult r = check_policy_gradient(21, cfg);
  INFO("worst z = ", r.max_err);
  CHECK(r.passed);
  CHECK(r.max_err > 0.0);
  CHECK(r.tol == 3.0);

  const CheckResult again = check_policy_gradient(21, cfg);
  CHECK(again.max_err == r.max_err);  // fully seeded, bitwise repeatable
}

TEST_CASE("corrupted backward rules are caught and named") {
  MutationGuard guard;

  ad::set_grad_mutation(ad::GradMutation::GaussianSigmaGradSign);
  std::vector<CheckResult> rs = check_primitive_ops(5, 3);
  const CheckResult* bad = find_check(rs, "gaussian_log_pdf");
  REQUIRE(bad != nullptr);
  CHECK_FALSE(bad->passed);
  CHECK(bad->max_err > bad->tol);
  CHECK(find_check(rs, "add")->passed);
  CHECK_FALSE(all_passed(rs));

  ad::set_grad_mutation(ad::GradMutation::TanhGradScale);
  rs = check_primitive_ops(5, 3);
  CHECK_FALSE(find_check(rs, "tanh")->passed);
  CHECK(find_check(rs, "relu")->passed);

  ad::set_grad_mutation(ad::GradMutation::MatmulLeftGradSign);
  rs = check_primitive_ops(5, 3);
  CHECK_FALSE(find_check(rs, "matmul")->passed);
  CHECK(find_check(rs, "sum")->passed);

  ad::set_grad_mutation(ad::GradMutation::None);
  rs = check_primitive_ops(5, 3);
  CHECK(find_check(rs, "gaussian_log_pdf")->passed);
  CHECK(find_check(rs, "matmul")->passed);
}

TEST_CASE("run_all aggregates every check and all_passed mirrors the report") {
  PgCheckConfig pg;
  pg.triples = 2;
  pg.trajectories = 5000;
  const std::vector<CheckResult> rs = run_all(5, 6, pg);
  CHECK(rs.size() == 23);  // 20 primitives + 2 composites + policy gradient
  CHECK(all_passed(rs));
  CHECK(find_check(rs, "policy_gradient") != nullptr);
  CHECK_FALSE(all_passed({}));
}

}  // TEST_SUITE
