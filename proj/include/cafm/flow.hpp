#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/model.hpp"
#include "cafm/rng.hpp"
#include "cafm/tensor.hpp"

namespace cafm::flow {

// Uniform Euler grid on [0,1] with n steps, optionally split at t0 = n1/n
// into a mean-flow prefix (n1 steps) and an exploration suffix (n2 steps).
class TimeGrid {
 public:
  static TimeGrid uniform(std::size_t n);
  static TimeGrid with_split(std::size_t n1, std::size_t n2);

  std::size_t n() const { return n_; }
  double dt() const { return 1.0 / static_cast<double>(n_); }
  double time(std::size_t k) const;  // k/n, for k in [0, n]

  bool has_split() const { return split_; }
  std::size_t n1() const;
  std::size_t n2() const;
  double t0() const;  // time(n1)

 private:
  std::size_t n_ = 1;
  std::size_t n1_ = 0;
  bool split_ = false;
};

// Linear interpolant psi_t = (1-t) x0 + t x1; its time derivative x1 - x0 is
// the regression target of the flow-matching loss.
Tensor interpolant(double t, const Tensor& x0, const Tensor& x1);
// Row r uses t[r]; x0, x1 are [B,d].
Tensor interpolant_rows(const Tensor& t, const Tensor& x0, const Tensor& x1);

// A velocity field u(x, t) for x [B,d] and per-row times t [B]. The optional
// record path evaluates the same field on a tape for gradient-carrying x.
class VelocityField {
 public:
  using EvalFn = std::function<Tensor(const Tensor& x, const Tensor& t)>;
  using RecordFn = std::function<ad::Var(ad::Tape&, const ad::Var& x, const Tensor& t)>;

  explicit VelocityField(EvalFn eval) : eval_(std::move(eval)) {}
  VelocityField(EvalFn eval, RecordFn record)
      : eval_(std::move(eval)), record_(std::move(record)) {}

  Tensor operator()(const Tensor& x, const Tensor& t) const { return eval_(x, t); }
  Tensor operator()(const Tensor& x, double t) const;
  ad::Var record(ad::Tape& tape, const ad::Var& x, double t) const;
  bool recordable() const { return static_cast<bool>(record_); }

 private:
  EvalFn eval_;
  RecordFn record_;
};

// MLP-backed fields. The ParamSet flavor snapshots the parameters; the
// ParamVars flavor additionally supports recording and must not outlive the
// tape its leaves were created on.
VelocityField field_from_params(const MlpConfig& cfg, const ParamSet& params);
VelocityField field_from_param_vars(const MlpConfig& cfg, const ParamVars& vars);

// One sampled path. `states` is [n+1, d] (or [B,d] rows stacked per step for
// batched rollouts, see RolloutBatch). Randomized steps also log the density
// of the applied velocity; when recorded on a tape those log-densities are
// Vars whose gradients flow into the field parameters and sigma.
struct Trajectory {
  std::vector<double> times;                // n+1 grid times
  Tensor states;                            // [n+1, d]
  Tensor velocities;                        // [n, d], the applied velocities
  std::vector<double> log_densities;        // one per randomized step (else empty)
  std::vector<ad::Var> log_density_vars;    // parallel to log_densities when recorded
  std::vector<ad::Var> state_vars;          // filled by recorded deterministic rollouts

  Tensor x1() const { return states.row(states.rows() - 1); }
};

// Batched rollout: states[k] is the whole batch at grid time k.
struct RolloutBatch {
  std::vector<double> times;
  std::vector<Tensor> states;               // n+1 tensors of shape [B,d]
  std::vector<ad::Var> state_vars;          // recorded deterministic rollouts
  std::vector<Tensor> log_densities;        // randomized steps, each [B]
  std::vector<ad::Var> log_density_vars;

  const Tensor& x1() const { return states.back(); }
};

// Forward-Euler rollout of dx = u dt from t=0 to t=1. With record=true the
// states stay on `tape` so a loss of x1 backpropagates through every step.
Trajectory sample_deterministic(const VelocityField& field, const Tensor& x0,
                                const TimeGrid& grid, bool record = false,
                                ad::Tape* tape = nullptr);
RolloutBatch sample_deterministic_batch(const VelocityField& field, const Tensor& x0,
                                        const TimeGrid& grid, bool record = false,
                                        ad::Tape* tape = nullptr);

// Exploration sigma for randomized step k (row k of the [n2,d] log-sigma
// table), floored at sigma_floor: sigma = relu(exp(log_sigma) - floor) + floor.
Tensor sigma_row_eval(const Tensor& log_sigma, std::size_t k, double sigma_floor);
ad::Var sigma_row_var(ad::Tape& tape, const ad::Var& log_sigma, std::size_t k,
                      double sigma_floor);

// Two-stage sampler: `field1` drives the mean flow before t0; after t0 the
// velocity is field2 plus Gaussian exploration noise sigma_k * eps when
// randomized=true, or plain field2 when randomized=false (mean flow; sigma
// and rng unused). theta2_sigma holds the stage-2 MLP parameters plus the
// "log_sigma" table.
Trajectory sample_randomized(const MlpConfig& cfg, const ParamSet& theta1,
                             const ParamSet& theta2_sigma, double sigma_floor,
                             const Tensor& x0, const TimeGrid& grid, bool randomized,
                             RngStream* rng);

// Batched randomized rollout used in training: states are detached data;
// each randomized step records log pi(u_k | x_k) on `tape` through the
// stage-2 parameter and sigma leaves (score-function estimator form).
RolloutBatch sample_randomized_batch_recorded(ad::Tape& tape, const MlpConfig& cfg,
                                              const VelocityField& field1,
                                              const ParamVars& theta2_vars,
                                              const ad::Var& log_sigma_var, double sigma_floor,
                                              const Tensor& x0, const TimeGrid& grid,
                                              RngStream& rng);

// Terminal state only (no stored path): cheap evaluation-time sampling.
Tensor rollout_terminal(const VelocityField& field, const Tensor& x0, const TimeGrid& grid);
Tensor rollout_terminal_stitched(const VelocityField& field1, const VelocityField& field2,
                                 const Tensor& x0, const TimeGrid& grid);

// Flow-matching regression term ||u(psi_t, t) - (x1 - x0)||^2 for one sample
// (x0, x1 are [d]); gradients flow into the parameters only.
ad::Var fm_loss_term(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                     const Tensor& x0, const Tensor& x1, double t);
// Batch mean of per-row squared errors; t[r] applies to row r.
ad::Var fm_loss_batch(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                      const Tensor& x0, const Tensor& x1, const Tensor& t);

}  // namespace cafm::flow
