#pragma once

#include <cstddef>
#include <functional>

#include "cafm/rng.hpp"
#include "cafm/tensor.hpp"

namespace cafm::targets {

// Attempt budget per rejection-sampled point; exceeding it throws.
inline constexpr std::size_t kDefaultRejectionCap = 1'000'000;

// Base density q0 = N(0, I_d); every flow starts from these draws.
Tensor sample_q0(std::size_t n, std::size_t d, RngStream& rng);

// Equal-weight mixture of N((3,3), 0.6 I) and N((-3,-3), 1.5 I), rejection
// sampled into the box [-4,4]^2. Each attempt re-draws the component, so the
// result is the mixture restricted to the box.
Tensor sample_box_gmm(std::size_t n, RngStream& rng,
                      std::size_t rejection_cap = kDefaultRejectionCap);

// Uniform over the union of [1,5]^2 and [-5,-1]^2 (both boxes equally
// likely).
Tensor sample_two_boxes_uniform(std::size_t n, RngStream& rng);

// Equal-weight mixture of d isotropic Gaussians with variance 0.05 centered
// at the standard unit vectors e_1..e_d, rejection sampled into the unit
// ball.
Tensor sample_ball_gmm(std::size_t n, std::size_t d, RngStream& rng,
                       std::size_t rejection_cap = kDefaultRejectionCap);

// z ~ N(0, I_10) projected onto the affine subspace sum(x) = -10 via
// x = z - ((1'z + 10)/10) * 1. Mean -1 per coordinate, covariance the
// centering projector I - 11'/10.
Tensor sample_subspace_gaussian(std::size_t n, RngStream& rng);

inline constexpr std::size_t kSubspaceDim = 10;

using TargetSampler = std::function<Tensor(std::size_t n, RngStream& rng)>;

}  // namespace cafm::targets
