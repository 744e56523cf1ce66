#include "cafm/targets.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cafm::targets {

namespace {

[[noreturn]] void cap_exceeded(const char* sampler, std::size_t cap) {
  throw std::runtime_error(std::string(sampler) + ": rejection cap of " + std::to_string(cap) +
                           " attempts exceeded for one point");
}

}  // namespace

Tensor sample_q0(std::size_t n, std::size_t d, RngStream& rng) {
  return rng.normal_tensor({n, d});
}

Tensor sample_box_gmm(std::size_t n, RngStream& rng, std::size_t rejection_cap) {
  const double means[2] = {3.0, -3.0};
  const double stds[2] = {std::sqrt(0.6), std::sqrt(1.5)};
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t attempts = 0;
    for (;;) {
      if (++attempts > rejection_cap) cap_exceeded("sample_box_gmm", rejection_cap);
      const std::size_t c = rng.uniform() < 0.5 ? 0 : 1;
      const double x = means[c] + stds[c] * rng.normal();
      const double y = means[c] + stds[c] * rng.normal();
      if (x >= -4.0 && x <= 4.0 && y >= -4.0 && y <= 4.0) {
        out.at(i, 0) = x;
        out.at(i, 1) = y;
        break;
      }
    }
  }
  return out;
}

Tensor sample_two_boxes_uniform(std::size_t n, RngStream& rng) {
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    out.at(i, 0) = sign * (1.0 + 4.0 * rng.uniform());
    out.at(i, 1) = sign * (1.0 + 4.0 * rng.uniform());
  }
  return out;
}

Tensor sample_ball_gmm(std::size_t n, std::size_t d, RngStream& rng,
                       std::size_t rejection_cap) {
  if (d == 0) throw std::invalid_argument("sample_ball_gmm: d must be positive");
  const double std_dev = std::sqrt(0.05);
  Tensor out({n, d});
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t attempts = 0;
    for (;;) {
      if (++attempts > rejection_cap) cap_exceeded("sample_ball_gmm", rejection_cap);
      const std::size_t c = rng.uniform_index(d);
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = (j == c ? 1.0 : 0.0) + std_dev * rng.normal();
        sq += x[j] * x[j];
      }
      if (sq <= 1.0) {
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x[j];
        break;
      }
    }
  }
  return out;
}

Tensor sample_subspace_gaussian(std::size_t n, RngStream& rng) {
  const std::size_t d = kSubspaceDim;
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = rng.normal();
      s += out.at(i, j);
    }
    const double shift = (s + 10.0) / 10.0;
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) -= shift;
  }
  return out;
}

}  // namespace cafm::targets
