#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cafm/constraints.hpp"
#include "cafm/rng.hpp"
#include "cafm/tensor.hpp"

namespace cafm::metrics {

// Sliced Wasserstein distance between empirical samples A [n,d] and B [m,d]:
// p-th root of the mean, over n_proj uniform random directions, of the 1-D
// p-Wasserstein distance (sorted-quantile coupling, linear interpolation at
// midpoint quantile levels when n != m) raised to the p.
double swd(const Tensor& a, const Tensor& b, std::size_t n_proj, double p, RngStream& rng);
double swd(const Tensor& a, const Tensor& b, RngStream& rng);  // n_proj=256, p=2

// Same estimate plus its Monte-Carlo standard error over projections
// (delta method through the p-th root).
struct SwdEstimate {
  double value = 0.0;
  double se = 0.0;
};
SwdEstimate swd_with_se(const Tensor& a, const Tensor& b, std::size_t n_proj, double p,
                        RngStream& rng);

// Exact 1-D p-Wasserstein^p between two sample sets (the inner kernel of
// swd), exposed for direct checks.
double wasserstein_1d_pp(std::vector<double> a, std::vector<double> b, double p);

// Fraction of rows with contains() false.
double violation_rate(const Tensor& samples, const ConstraintSet& c);

// Mean Euclidean distance to the set; throws if the set has no usable
// distance (external membership oracles).
double mean_set_distance(const Tensor& samples, const ConstraintSet& c);

// One generation per trial; the seed argument is already trial-specific.
using GenSampler = std::function<Tensor(std::size_t n, std::uint64_t seed)>;

struct EvalSpec {
  std::size_t trials = 10;
  std::size_t per_trial_n = 2000;
  std::size_t n_proj = 256;
  double p = 2.0;
};

// Per-trial metrics and their aggregates. With a single trial the stds are 0
// by convention and single_trial is set so reports can flag it.
struct MetricsSummary {
  std::size_t trials = 0;
  std::size_t per_trial_n = 0;
  bool single_trial = false;
  double swd_mean = 0.0, swd_std = 0.0;
  double viol_mean = 0.0, viol_std = 0.0;
  double dist_mean = 0.0;  // NaN when the set has no distance
  std::vector<double> swd_trials, viol_trials, dist_trials;
};

// Runs `trials` independent generations of per_trial_n points (trial k uses
// seed derived from (seed, "eval.trial", k)), comparing each against the
// fixed reference sample. SWD projections draw from (seed, "eval.proj", k).
MetricsSummary evaluate_trials(const GenSampler& sampler, const ConstraintSet& c,
                               const Tensor& reference, const EvalSpec& spec,
                               std::uint64_t seed);

}  // namespace cafm::metrics
