#pragma once

#include <cstdint>
#include <string_view>

#include "cafm/tensor.hpp"

namespace cafm {

// Counter-based splittable random stream. A stream is a pure function of
// (root seed, purpose tag, stream index, draw counter), so independent
// consumers can derive non-overlapping streams without sharing state and a
// run is reproducible regardless of evaluation order across streams.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::string_view tag, std::uint64_t index = 0);

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // N(0, 1), Box-Muller
  std::uint64_t uniform_index(std::uint64_t n);  // unbiased draw from {0, ..., n-1}

  Tensor normal_tensor(std::vector<std::size_t> shape);
  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_normal_ = false;
};

// Derives a fresh 64-bit seed for a sub-purpose (e.g. one trial of an
// evaluation loop) without consuming draws from any other stream.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view tag, std::uint64_t index);

}  // namespace cafm
