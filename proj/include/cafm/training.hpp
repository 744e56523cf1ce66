#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/constraints.hpp"
#include "cafm/flow.hpp"
#include "cafm/model.hpp"
#include "cafm/rng.hpp"
#include "cafm/targets.hpp"
#include "cafm/tensor.hpp"

namespace cafm::training {

// How the flow-matching time is drawn: uniformly on [0,1], or on the Euler
// grid t = i/N, i ~ U{0..N-1} (the discretization-aware variant used when a
// rollout penalty is present).
enum class TSampling { Continuous, Grid };

struct OptimizerConfig {
  std::string method = "adam";  // "adam" | "sgd"
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lambda = 0.0;                              // constraint penalty weight
  flow::TimeGrid grid = flow::TimeGrid::uniform(75);  // sampling/rollout grid
  double lr1 = 1e-3, lr2 = 1e-3;
  std::size_t batch1 = 256, batch2 = 64;
  std::size_t iters1 = 5000, iters2 = 2000;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  double sigma_floor = 1e-4;
  double sigma_init = 0.1;   // initial exploration scale (log-parameterized)
  bool baseline = false;     // subtract the batch-mean indicator in stage 2
  TSampling t_sampling = TSampling::Continuous;

  void validate() const;
};

struct TrainReport {
  std::vector<double> fm_loss;   // per-iteration flow-matching term
  std::vector<double> penalty;   // per-iteration constraint term (0 when off)
  std::vector<double> wall_ms;   // per-iteration wall time
  std::uint64_t seed = 0;
  std::string checkpoint_path;   // filled by callers that save one
};

// First-order optimizer over a ParamSet (gradients aligned with entries()).
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, double lr, ParamSet* params);
  void step(const std::vector<Tensor>& grads);
  std::size_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  ParamSet* params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// Collects gradients for every parameter leaf, in entry order.
std::vector<Tensor> grads_in_order(const ad::GradMap& grads, const ParamVars& vars);

// Vanilla flow matching: minimize E ||u(psi_t, t) - (x1 - x0)||^2 with
// x0 ~ N(0,I), x1 ~ q1 and t drawn per cfg.t_sampling. Deterministic in
// cfg.seed; a non-finite loss aborts naming the iteration.
std::pair<ParamSet, TrainReport> train_fm(const TrainConfig& cfg, const MlpConfig& mcfg,
                                          const targets::TargetSampler& q1);

// Distance-penalty training: the FM term (grid time sampling) plus
// lambda * mean distance of full recorded Euler rollouts, differentiated
// pathwise through every step. Requires a distance-capable set.
std::pair<ParamSet, TrainReport> train_fmdd(const TrainConfig& cfg, const MlpConfig& mcfg,
                                            const targets::TargetSampler& q1,
                                            const ConstraintSet& c);

// Score-function gradient of P(X1 in C) from randomized trajectories that
// recorded their per-step action log-densities: the tape gradient of
// (1/M) sum_m w_m * sum_i log pi(u_mi | x_mi), with w = indicator of the
// terminal state (optionally centered by the batch mean).
ad::GradMap pg_gradient(ad::Tape& tape, std::span<const flow::Trajectory> trajectories,
                        const ConstraintSet& c, bool baseline = false);

struct FmReResult {
  ParamSet theta1;        // stage-1 parameters (frozen in stage 2)
  ParamSet theta2_sigma;  // stage-2 parameters plus the "log_sigma" table
  TrainReport report1;
  TrainReport report2;
};

// Two-stage randomized-exploration training: stage 1 is train_fm (t uniform
// on [0,1]); stage 2 copies theta1, adds a per-step log-sigma table over the
// exploration window, and optimizes the reparameterized FM term at times
// t0 + i*dt plus lambda times the score-function constraint term from
// randomized rollouts. Only (theta2, sigma) move. Works with any membership
// set, including external oracles.
FmReResult train_fmre(const TrainConfig& cfg, const MlpConfig& mcfg,
                      const targets::TargetSampler& q1, const ConstraintSet& c);

}  // namespace cafm::training
