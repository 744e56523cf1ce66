#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "cafm/constraints.hpp"
#include "cafm/rng.hpp"
#include "doctest.h"
#include "support/finite_diff.hpp"

using namespace cafm;
using cafm::testing::finite_diff;
using cafm::testing::rel_max_err;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ConstraintSet box44() { return make_box({-4.0, -4.0}, {4.0, 4.0}); }
ConstraintSet two_boxes() { return TwoBoxes{1.0, 5.0}; }
ConstraintSet unit_ball(std::size_t d) { return L2Ball{d, 1.0}; }
ConstraintSet sum_plane() {
  Hyperplane h;
  h.normal = Tensor::full({10}, 1.0);
  h.offset = 10.0;
  h.tol = 5e-4;
  return h;
}

// Brute-force distance oracle: nearest member point on a dense grid.
double grid_distance(const ConstraintSet& c, const Tensor& x, double lo, double hi, int n) {
  double best = kInf;
  const double step = (hi - lo) / (n - 1);
  Tensor p({2});
  for (int i = 0; i < n; ++i) {
    p[0] = lo + i * step;
    for (int j = 0; j < n; ++j) {
      p[1] = lo + j * step;
      if (!contains(c, p)) continue;
      const double d = std::hypot(x[0] - p[0], x[1] - p[1]);
      best = std::min(best, d);
    }
  }
  return best;
}

}  // namespace

TEST_SUITE_BEGIN("constraints");

TEST_CASE("membership rules for all geometries") {
  ConstraintSet box = box44();
  CHECK(contains(box, Tensor::from({0.0, 0.0})));
  CHECK(contains(box, Tensor::from({4.0, -4.0})));  // boundary included
  CHECK(!contains(box, Tensor::from({4.5, 0.0})));

  ConstraintSet tb = two_boxes();
  CHECK(contains(tb, Tensor::from({2.0, 3.0})));
  CHECK(contains(tb, Tensor::from({-2.0, -3.0})));
  CHECK(contains(tb, Tensor::from({1.0, 5.0})));    // boundary included
  CHECK(!contains(tb, Tensor::from({2.0, -3.0})));  // mixed signs
  CHECK(!contains(tb, Tensor::from({0.5, 0.5})));   // inside the gap
  CHECK(!contains(tb, Tensor::from({5.5, 2.0})));   // beyond outer

  ConstraintSet ball = unit_ball(3);
  CHECK(contains(ball, Tensor::from({0.5, 0.5, 0.5})));
  CHECK(contains(ball, Tensor::from({1.0, 0.0, 0.0})));
  CHECK(!contains(ball, Tensor::from({0.8, 0.8, 0.0})));

  ConstraintSet plane = sum_plane();
  CHECK(contains(plane, Tensor::full({10}, -1.0)));  // sums to -10 exactly
  Tensor off = Tensor::full({10}, -1.0);
  off[0] += 1e-3;  // residual 1e-3 > tol
  CHECK(!contains(plane, off));
  off[0] = -1.0 + 2e-4;  // residual 2e-4 <= tol
  CHECK(contains(plane, off));
}

TEST_CASE("distances match hand-computed values") {
  CHECK(set_distance(box44(), Tensor::from({0.0, 0.0})) == 0.0);
  CHECK(set_distance(box44(), Tensor::from({5.0, 0.0})) == doctest::Approx(1.0));
  CHECK(set_distance(box44(), Tensor::from({5.0, 5.0})) == doctest::Approx(std::sqrt(2.0)));
  CHECK(set_distance(box44(), Tensor::from({-6.0, 2.0})) == doctest::Approx(2.0));

  // Origin is equidistant from both component boxes of TwoBoxes.
  CHECK(set_distance(two_boxes(), Tensor::from({0.0, 0.0})) == doctest::Approx(std::sqrt(2.0)));
  CHECK(set_distance(two_boxes(), Tensor::from({2.0, 3.0})) == 0.0);
  // (2,-3): 4 away from the positive box in x2, 3 away from the negative box
  // in x1; the min wins.
  CHECK(set_distance(two_boxes(), Tensor::from({2.0, -3.0})) == doctest::Approx(3.0));
  CHECK(set_distance(two_boxes(), Tensor::from({6.0, 6.0})) == doctest::Approx(std::sqrt(2.0)));

  CHECK(set_distance(unit_ball(2), Tensor::from({2.0, 0.0})) == doctest::Approx(1.0));
  CHECK(set_distance(unit_ball(2), Tensor::from({0.3, 0.3})) == 0.0);

  Tensor p = Tensor::full({10}, -1.0);
  CHECK(set_distance(sum_plane(), p) == doctest::Approx(0.0));
  p[0] = 0.0;  // residual 1
  CHECK(set_distance(sum_plane(), p) == doctest::Approx(1.0 / std::sqrt(10.0)));
}

TEST_CASE("distance agrees with a dense-grid nearest-member oracle") {
  RngStream rng(31, "grid");
  for (const ConstraintSet& c : {box44(), two_boxes(), unit_ball(2)}) {
    CAPTURE(constraint_name(c));
    for (int k = 0; k < 8; ++k) {
      Tensor x = rng.uniform_tensor({2}, -7.0, 7.0);
      const double exact = set_distance(c, x);
      const double grid = grid_distance(c, x, -6.0, 6.0, 300);
      // Grid resolution is 12/299 ~ 0.04; nearest grid member overestimates
      // by at most one cell diagonal.
      CHECK(grid >= exact - 1e-12);
      CHECK(grid - exact < 0.06);
    }
  }
}

TEST_CASE("hyperplane distance verified by explicit projection") {
  ConstraintSet plane = sum_plane();
  const Hyperplane& h = std::get<Hyperplane>(plane);
  RngStream rng(32, "plane");
  for (int k = 0; k < 20; ++k) {
    Tensor x = rng.normal_tensor({10});
    const double dist = set_distance(plane, x);
    // Project onto the plane and check the projection is a member at the
    // claimed distance, and that random members are never closer.
    double res = h.offset;
    for (int j = 0; j < 10; ++j) res += x[j];
    Tensor proj = x;
    const double nn2 = 10.0;
    for (int j = 0; j < 10; ++j) proj[j] -= res * h.normal[j] / nn2;
    double proj_res = h.offset;
    for (int j = 0; j < 10; ++j) proj_res += proj[j];
    CHECK(std::abs(proj_res) < 1e-9);
    CHECK(norm2(x - proj) == doctest::Approx(dist).epsilon(1e-12));
    for (int m = 0; m < 10; ++m) {
      Tensor q = rng.normal_tensor({10});
      double qres = h.offset;
      for (int j = 0; j < 10; ++j) qres += q[j];
      for (int j = 0; j < 10; ++j) q[j] -= qres * h.normal[j] / nn2;
      CHECK(norm2(x - q) >= dist - 1e-9);
    }
  }
}

TEST_CASE("one-sided boxes accept infinite bounds") {
  ConstraintSet half = make_box({0.0, -kInf}, {kInf, kInf});
  CHECK(contains(half, Tensor::from({3.0, -100.0})));
  CHECK(!contains(half, Tensor::from({-0.5, 0.0})));
  CHECK(set_distance(half, Tensor::from({-0.5, 7.0})) == doctest::Approx(0.5));
  CHECK(set_distance(half, Tensor::from({2.0, -3.0})) == 0.0);
  Tensor g = set_distance_gradient(half, Tensor::from({-2.0, 1.0}));
  CHECK(g[0] == doctest::Approx(-1.0));
  CHECK(g[1] == 0.0);
}

TEST_CASE("make_box validates inputs") {
  CHECK_THROWS_AS(make_box({1.0}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(make_box({0.0, 0.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(make_box({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_box({std::nan("")}, {1.0}), std::invalid_argument);
}

TEST_CASE("distance gradients have unit norm outside and match finite differences") {
  RngStream rng(33, "fdgrad");
  auto check_set = [&](const ConstraintSet& c, const Tensor& x, double min_dist) {
    const double dist = set_distance(c, x);
    if (dist < min_dist) return false;
    Tensor g = set_distance_gradient(c, x);
    CHECK(norm2(g) == doctest::Approx(1.0).epsilon(1e-9));
    auto f = [&](const std::vector<Tensor>& in) { return set_distance(c, in[0]); };
    CHECK(rel_max_err(g, finite_diff(f, {x})[0]) < 1e-6);
    return true;
  };

  int checked = 0;
  for (int k = 0; k < 60; ++k) {
    Tensor x = rng.uniform_tensor({2}, -8.0, 8.0);
    if (set_distance(box44(), x) > 0.05) checked += check_set(box44(), x, 0.05);
    // Stay away from the tie line |x| swapped where the min() kink sits.
    const double dp = set_distance(two_boxes(), x);
    Tensor xm = x;
    if (dp > 0.05 && std::abs(x[0] + x[1]) > 0.2) checked += check_set(two_boxes(), x, 0.05);
    if (set_distance(unit_ball(2), x) > 0.05) checked += check_set(unit_ball(2), x, 0.05);
  }
  for (int k = 0; k < 10; ++k) {
    Tensor x = rng.normal_tensor({10});
    if (set_distance(sum_plane(), x) > 0.05) checked += check_set(sum_plane(), x, 0.05);
  }
  CHECK(checked > 50);  // the sampling actually exercised the sets

  // Inside the set the gradient is zero.
  Tensor inside = Tensor::from({0.5, 0.5});
  Tensor g = set_distance_gradient(box44(), inside);
  CHECK(norm2(g) == 0.0);
}

TEST_CASE("batched distance node matches per-point values and gradients") {
  RngStream rng(34, "batch");
  ConstraintSet c = two_boxes();
  Tensor xs = rng.uniform_tensor({6, 2}, -7.0, 7.0);

  ad::Tape tape;
  ad::Var xv = tape.leaf(xs);
  ad::Var d = set_distance_var(tape, c, xv);
  REQUIRE(d.value.shape() == std::vector<std::size_t>{6});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(d.value[i] == set_distance(c, xs.row(i)));
  }

  Tensor w = rng.uniform_tensor({6}, 0.5, 1.5);
  ad::Var loss = tape.sum(tape.mul(d, ad::constant(w)));
  Tensor g = tape.backward(loss).at(xv);
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor expected = set_distance_gradient(c, xs.row(i)) * w[i];
    CHECK(std::abs(g.at(i, 0) - expected[0]) < 1e-12);
    CHECK(std::abs(g.at(i, 1) - expected[1]) < 1e-12);
  }

  // scalar mode
  ad::Var x1 = tape.leaf(xs.row(0));
  ad::Var d1 = set_distance_var(tape, c, x1);
  CHECK(d1.value.numel() == 1);
  CHECK(d1.value[0] == d.value[0]);
}

TEST_CASE("contains and distance are consistent") {
  RngStream rng(35, "consist");
  for (const ConstraintSet& c : {box44(), two_boxes(), unit_ball(2)}) {
    for (int k = 0; k < 500; ++k) {
      Tensor x = rng.uniform_tensor({2}, -6.0, 6.0);
      CHECK(contains(c, x) == (set_distance(c, x) == 0.0));
    }
  }
  ConstraintSet plane = sum_plane();
  const double tol_dist = 5e-4 / std::sqrt(10.0);
  for (int k = 0; k < 500; ++k) {
    Tensor x = RngStream(36, "planepts", k).normal_tensor({10});
    // Pull half the points close to the plane so both outcomes occur.
    if (k % 2 == 0) {
      double res = 10.0;
      for (int j = 0; j < 10; ++j) res += x[j];
      for (int j = 0; j < 10; ++j) x[j] -= (res - (k % 7 - 3) * 2e-4) / 10.0;
    }
    CHECK(contains(plane, x) == (set_distance(plane, x) <= tol_dist));
  }
}

TEST_CASE("dimension validation") {
  CHECK_THROWS_AS(contains(box44(), Tensor::from({1.0, 2.0, 3.0})), std::invalid_argument);
  CHECK_THROWS_AS(set_distance(unit_ball(3), Tensor::from({1.0})), std::invalid_argument);
  CHECK(constraint_dim(two_boxes()) == 2);
  CHECK(constraint_dim(sum_plane()) == 10);
}

TEST_CASE("external oracle matches native membership over the wire") {
  // Script: box membership for [-4,4]^2, one reply line per input line.
  const char* script =
      "import sys\n"
      "for line in sys.stdin:\n"
      "    xs = [float(v) for v in line.strip().split(',')]\n"
      "    ok = all(-4.0 <= v <= 4.0 for v in xs)\n"
      "    sys.stdout.write('1\\n' if ok else '0\\n')\n"
      "    sys.stdout.flush()\n";
  std::ofstream("oracle_box_test.py") << script;

  ConstraintSet oracle = make_external_oracle("python3 oracle_box_test.py", 2, 10.0);
  ConstraintSet native = box44();
  CHECK(!distance_available(oracle));
  CHECK(distance_available(native));
  CHECK_THROWS_WITH_AS(set_distance(oracle, Tensor::from({0.0, 0.0})),
                       doctest::Contains("unavailable"), std::runtime_error);

  RngStream rng(37, "oracle");
  Tensor xs = rng.uniform_tensor({200, 2}, -6.0, 6.0);
  std::vector<char> got = contains_batch(oracle, xs);
  std::vector<char> want = contains_batch(native, xs);
  CHECK(got == want);

  // single-point interface goes through the same wire
  CHECK(contains(oracle, Tensor::from({0.0, 0.0})));
  CHECK(!contains(oracle, Tensor::from({5.0, 0.0})));
  std::remove("oracle_box_test.py");
}

TEST_CASE("external oracle recovers from a crashing subprocess") {
  // Answers one batch then exits; the second batch must trigger a respawn.
  const char* script =
      "import sys\n"
      "n = 0\n"
      "for line in sys.stdin:\n"
      "    sys.stdout.write('1\\n')\n"
      "    sys.stdout.flush()\n"
      "    n += 1\n"
      "    if n >= 3:\n"
      "        sys.exit(0)\n";
  std::ofstream("oracle_crash_test.py") << script;
  ConstraintSet oracle = make_external_oracle("python3 oracle_crash_test.py", 2, 10.0);
  Tensor xs({3, 2});
  CHECK(contains_batch(oracle, xs) == std::vector<char>({1, 1, 1}));
  CHECK(contains_batch(oracle, xs) == std::vector<char>({1, 1, 1}));  // respawned
  std::remove("oracle_crash_test.py");
}

TEST_CASE("external oracle reports malformed replies and timeouts") {
  std::ofstream("oracle_bad_test.py") << "import sys\n"
                                         "for line in sys.stdin:\n"
                                         "    sys.stdout.write('banana\\n')\n"
                                         "    sys.stdout.flush()\n";
  ConstraintSet bad = make_external_oracle("python3 oracle_bad_test.py", 2, 10.0);
  Tensor xs({2, 2});
  CHECK_THROWS_AS(contains_batch(bad, xs), OracleError);
  try {
    contains_batch(bad, xs);
  } catch (const OracleError& e) {
    CHECK(e.attempts() == 3);
    CHECK(std::string(e.what()).find("malformed") != std::string::npos);
  }

  ExternalOracle slow = make_external_oracle("sleep 30", 2, 0.2);
  slow.max_attempts = 2;
  ConstraintSet slow_set = slow;
  CHECK_THROWS_WITH_AS(contains_batch(slow_set, xs), doctest::Contains("timed out"), OracleError);
  std::remove("oracle_bad_test.py");
}

TEST_SUITE_END();
