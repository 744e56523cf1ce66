#include "cafm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cafm::metrics {

namespace {

// Empirical quantile with linear interpolation between order statistics;
// level q maps to fractional position q*n - 0.5, clamped at the ends.
double quantile(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  const double pos = q * static_cast<double>(n) - 0.5;
  if (pos <= 0.0) return sorted.front();
  if (pos >= static_cast<double>(n - 1)) return sorted.back();
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

Tensor unit_direction(std::size_t d, RngStream& rng) {
  Tensor dir({d});
  for (;;) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dir[j] = rng.normal();
      sq += dir[j] * dir[j];
    }
    if (sq > 1e-24) {
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t j = 0; j < d; ++j) dir[j] *= inv;
      return dir;
    }
  }
}

void project(const Tensor& xs, const Tensor& dir, std::vector<double>& out) {
  const std::size_t n = xs.rows(), d = xs.cols();
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += xs.at(i, j) * dir[j];
    out[i] = acc;
  }
}

void check_swd_inputs(const Tensor& a, const Tensor& b, std::size_t n_proj, double p) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
    throw std::invalid_argument("swd: samples must be [n,d] and [m,d] with matching d, got " +
                                a.shape_str() + " and " + b.shape_str());
  }
  if (a.rows() == 0 || b.rows() == 0) {
    throw std::invalid_argument("swd: both sample sets must be non-empty");
  }
  if (n_proj == 0 || !(p >= 1.0)) {
    throw std::invalid_argument("swd: need n_proj >= 1 and p >= 1");
  }
}

}  // namespace

double wasserstein_1d_pp(std::vector<double> a, std::vector<double> b, double p) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("wasserstein_1d_pp: empty sample set");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t levels = std::max(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < levels; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(levels);
    acc += std::pow(std::abs(quantile(a, q) - quantile(b, q)), p);
  }
  return acc / static_cast<double>(levels);
}

SwdEstimate swd_with_se(const Tensor& a, const Tensor& b, std::size_t n_proj, double p,
                        RngStream& rng) {
  check_swd_inputs(a, b, n_proj, p);
  const std::size_t d = a.cols();
  std::vector<double> pa, pb;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < n_proj; ++k) {
    Tensor dir = unit_direction(d, rng);
    project(a, dir, pa);
    project(b, dir, pb);
    const double wpp = wasserstein_1d_pp(pa, pb, p);
    sum += wpp;
    sum_sq += wpp * wpp;
  }
  const double mean_pp = sum / static_cast<double>(n_proj);
  SwdEstimate est;
  est.value = std::pow(mean_pp, 1.0 / p);
  if (n_proj > 1 && mean_pp > 0.0) {
    const double var_pp =
        std::max(0.0, (sum_sq - sum * sum / static_cast<double>(n_proj)) /
                          static_cast<double>(n_proj - 1));
    const double se_mean = std::sqrt(var_pp / static_cast<double>(n_proj));
    // d/dm m^(1/p) = (1/p) m^(1/p - 1)
    est.se = se_mean * std::pow(mean_pp, 1.0 / p - 1.0) / p;
  }
  return est;
}

double swd(const Tensor& a, const Tensor& b, std::size_t n_proj, double p, RngStream& rng) {
  return swd_with_se(a, b, n_proj, p, rng).value;
}

double swd(const Tensor& a, const Tensor& b, RngStream& rng) {
  return swd(a, b, 256, 2.0, rng);
}

double violation_rate(const Tensor& samples, const ConstraintSet& c) {
  const std::vector<char> in = contains_batch(c, samples);
  std::size_t out = 0;
  for (char v : in) out += v ? 0 : 1;
  return static_cast<double>(out) / static_cast<double>(in.size());
}

double mean_set_distance(const Tensor& samples, const ConstraintSet& c) {
  if (samples.ndim() != 2 || samples.rows() == 0) {
    throw std::invalid_argument("mean_set_distance: samples must be non-empty [n,d]");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    acc += set_distance(c, samples.row(i));
  }
  return acc / static_cast<double>(samples.rows());
}

MetricsSummary evaluate_trials(const GenSampler& sampler, const ConstraintSet& c,
                               const Tensor& reference, const EvalSpec& spec,
                               std::uint64_t seed) {
  if (spec.trials == 0 || spec.per_trial_n == 0) {
    throw std::invalid_argument("evaluate_trials: trials and per_trial_n must be positive");
  }
  MetricsSummary s;
  s.trials = spec.trials;
  s.per_trial_n = spec.per_trial_n;
  s.single_trial = spec.trials == 1;
  const bool has_dist = distance_available(c);
  for (std::size_t k = 0; k < spec.trials; ++k) {
    Tensor gen = sampler(spec.per_trial_n, derive_seed(seed, "eval.trial", k));
    RngStream proj_rng(seed, "eval.proj", k);
    s.swd_trials.push_back(swd(gen, reference, spec.n_proj, spec.p, proj_rng));
    s.viol_trials.push_back(violation_rate(gen, c));
    if (has_dist) s.dist_trials.push_back(mean_set_distance(gen, c));
  }
  auto mean_of = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  auto std_of = [](const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
  };
  s.swd_mean = mean_of(s.swd_trials);
  s.swd_std = std_of(s.swd_trials, s.swd_mean);
  s.viol_mean = mean_of(s.viol_trials);
  s.viol_std = std_of(s.viol_trials, s.viol_mean);
  s.dist_mean = has_dist ? mean_of(s.dist_trials) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace cafm::metrics
