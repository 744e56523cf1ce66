#include <cmath>
#include <set>
#include <stdexcept>

#include "cafm/rng.hpp"
#include "cafm/tensor.hpp"
#include "doctest.h"

using namespace cafm;

TEST_SUITE_BEGIN("tensor_rng");

TEST_CASE("tensor construction and shape checks") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from({1.0, 2.0}).rows(), std::logic_error);

  Tensor s = Tensor::scalar(4.5);
  CHECK(s.numel() == 1);
  CHECK(s.is_scalar());
  CHECK(s[0] == 4.5);
}

TEST_CASE("tensor arithmetic and matmul") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);

  Tensor d = a + b;
  CHECK(d[0] == 6);
  Tensor e = a * b;
  CHECK(e[3] == 32);
  CHECK_THROWS_AS(a + Tensor({3}), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), std::invalid_argument);

  CHECK(dot(Tensor::from({1, 2, 3}), Tensor::from({4, 5, 6})) == 32.0);
  CHECK(norm2(Tensor::from({3, 4})) == doctest::Approx(5.0));
}

TEST_CASE("tensor finiteness guard") {
  Tensor t = Tensor::from({1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK(!t.all_finite());
  CHECK_THROWS_WITH_AS(t.ensure_finite("unit-test-op"),
                       doctest::Contains("unit-test-op"), std::runtime_error);
}

TEST_CASE("rng streams are reproducible and decorrelated") {
  RngStream a(42, "x0", 0);
  RngStream b(42, "x0", 0);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, "x0", 1);
  RngStream d(42, "x1", 0);
  RngStream e(43, "x0", 0);
  RngStream base(42, "x0", 0);
  std::set<std::uint64_t> firsts = {RngStream(42, "x0", 0).next_u64(), c.next_u64(),
                                    d.next_u64(), e.next_u64()};
  CHECK(firsts.size() == 4);  // all four streams start differently
}

TEST_CASE("rng uniform and normal statistics") {
  RngStream r(7, "stats");
  const int n = 200000;
  double sum = 0, sum2 = 0, mn = 1e9, mx = -1e9;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
    mn = std::min(mn, u);
    mx = std::max(mx, u);
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sum2 / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12).epsilon(0.02));

  RngStream g(7, "normals");
  double nsum = 0, nsum2 = 0, nsum3 = 0;
  for (int i = 0; i < n; ++i) {
    double z = g.normal();
    nsum += z;
    nsum2 += z * z;
    nsum3 += z * z * z;
  }
  CHECK(nsum / n == doctest::Approx(0.0).epsilon(1.0));      // |mean| small
  CHECK(std::abs(nsum / n) < 0.01);
  CHECK(nsum2 / n == doctest::Approx(1.0).epsilon(0.02));    // variance 1
  CHECK(std::abs(nsum3 / n) < 0.05);                         // symmetric
}

TEST_CASE("rng uniform_index is in range and roughly uniform") {
  RngStream r(11, "idx");
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    std::uint64_t k = r.uniform_index(7);
    REQUIRE(k < 7);
    counts[k]++;
  }
  for (int c : counts) CHECK(std::abs(c - n / 7) < 600);  // ~6 sigma band
  CHECK_THROWS_AS(r.uniform_index(0), std::invalid_argument);
}

TEST_CASE("derive_seed is a pure function of its arguments") {
  CHECK(derive_seed(1, "trial", 0) == derive_seed(1, "trial", 0));
  CHECK(derive_seed(1, "trial", 0) != derive_seed(1, "trial", 1));
  CHECK(derive_seed(1, "trial", 0) != derive_seed(2, "trial", 0));
  CHECK(derive_seed(1, "trial", 0) != derive_seed(1, "other", 0));
}

TEST_SUITE_END();
