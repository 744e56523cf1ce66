#include "cafm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cafm::flow {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

void check_batch_x(const Tensor& x, const char* what) {
  if (x.ndim() != 2) {
    throw std::invalid_argument(std::string(what) + ": x must be [B,d], got shape " +
                                x.shape_str());
  }
}

Tensor euler_step(const Tensor& x, const Tensor& u, double dt) { return x + u * dt; }

}  // namespace

TimeGrid TimeGrid::uniform(std::size_t n) {
  if (n == 0) throw std::invalid_argument("TimeGrid: need at least one step");
  TimeGrid g;
  g.n_ = n;
  return g;
}

TimeGrid TimeGrid::with_split(std::size_t n1, std::size_t n2) {
  if (n2 == 0) throw std::invalid_argument("TimeGrid: split needs at least one exploration step");
  TimeGrid g;
  g.n_ = n1 + n2;
  g.n1_ = n1;
  g.split_ = true;
  return g;
}

double TimeGrid::time(std::size_t k) const {
  if (k > n_) {
    throw std::out_of_range("TimeGrid::time: index " + std::to_string(k) + " > " +
                            std::to_string(n_));
  }
  return static_cast<double>(k) / static_cast<double>(n_);
}

std::size_t TimeGrid::n1() const {
  if (!split_) throw std::logic_error("TimeGrid: grid has no split");
  return n1_;
}

std::size_t TimeGrid::n2() const {
  if (!split_) throw std::logic_error("TimeGrid: grid has no split");
  return n_ - n1_;
}

double TimeGrid::t0() const { return time(n1()); }

Tensor interpolant(double t, const Tensor& x0, const Tensor& x1) {
  if (!x0.same_shape(x1)) {
    throw std::invalid_argument("interpolant: shape mismatch " + x0.shape_str() + " vs " +
                                x1.shape_str());
  }
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("interpolant: t = " + std::to_string(t) + " outside [0,1]");
  }
  return x0 * (1.0 - t) + x1 * t;
}

Tensor interpolant_rows(const Tensor& t, const Tensor& x0, const Tensor& x1) {
  if (!x0.same_shape(x1) || x0.ndim() != 2 || t.numel() != x0.rows()) {
    throw std::invalid_argument("interpolant_rows: bad shapes t " + t.shape_str() + ", x0 " +
                                x0.shape_str() + ", x1 " + x1.shape_str());
  }
  Tensor out = Tensor::zeros_like(x0);
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    const double tr = t[r];
    if (!(tr >= 0.0 && tr <= 1.0)) {
      throw std::invalid_argument("interpolant_rows: t entry outside [0,1]");
    }
    for (std::size_t j = 0; j < x0.cols(); ++j) {
      out.at(r, j) = x0.at(r, j) * (1.0 - tr) + x1.at(r, j) * tr;
    }
  }
  return out;
}

Tensor VelocityField::operator()(const Tensor& x, double t) const {
  check_batch_x(x, "VelocityField");
  return eval_(x, Tensor::full({x.rows()}, t));
}

ad::Var VelocityField::record(ad::Tape& tape, const ad::Var& x, double t) const {
  if (!record_) {
    throw std::logic_error("VelocityField: this field has no tape-recording path");
  }
  check_batch_x(x.value, "VelocityField::record");
  return record_(tape, x, Tensor::full({x.value.rows()}, t));
}

VelocityField field_from_params(const MlpConfig& cfg, const ParamSet& params) {
  ParamSet snapshot = params;
  return VelocityField([cfg, snapshot](const Tensor& x, const Tensor& t) {
    return velocity_eval(cfg, snapshot, x, t);
  });
}

VelocityField field_from_param_vars(const MlpConfig& cfg, const ParamVars& vars) {
  // Evaluation path runs on a value snapshot; recording uses the live leaves.
  ParamSet snapshot;
  for (const auto& [name, v] : vars.entries) snapshot.add(name, v.value);
  const ParamVars* vars_ptr = &vars;
  return VelocityField(
      [cfg, snapshot](const Tensor& x, const Tensor& t) {
        return velocity_eval(cfg, snapshot, x, t);
      },
      [cfg, vars_ptr](ad::Tape& tape, const ad::Var& x, const Tensor& t) {
        return velocity_var(tape, cfg, *vars_ptr, x, ad::constant(t));
      });
}

RolloutBatch sample_deterministic_batch(const VelocityField& field, const Tensor& x0,
                                        const TimeGrid& grid, bool record, ad::Tape* tape) {
  check_batch_x(x0, "sample_deterministic");
  if (record && (tape == nullptr || !field.recordable())) {
    throw std::invalid_argument(
        "sample_deterministic: record=true needs a tape and a recordable field");
  }
  const double dt = grid.dt();
  RolloutBatch rb;
  rb.times.reserve(grid.n() + 1);
  rb.states.reserve(grid.n() + 1);
  for (std::size_t k = 0; k <= grid.n(); ++k) rb.times.push_back(grid.time(k));

  if (!record) {
    Tensor x = x0;
    rb.states.push_back(x);
    for (std::size_t k = 0; k < grid.n(); ++k) {
      Tensor u = field(x, Tensor::full({x.rows()}, grid.time(k)));
      x = euler_step(x, u, dt);
      rb.states.push_back(x);
    }
    return rb;
  }

  ad::Var x = ad::constant(x0);
  rb.states.push_back(x.value);
  rb.state_vars.push_back(x);
  for (std::size_t k = 0; k < grid.n(); ++k) {
    ad::Var u = field.record(*tape, x, grid.time(k));
    x = tape->add(x, tape->scalar_mul(u, dt));
    rb.states.push_back(x.value);
    rb.state_vars.push_back(x);
  }
  return rb;
}

Trajectory sample_deterministic(const VelocityField& field, const Tensor& x0,
                                const TimeGrid& grid, bool record, ad::Tape* tape) {
  if (x0.ndim() != 1) {
    throw std::invalid_argument("sample_deterministic: x0 must be [d], got shape " +
                                x0.shape_str());
  }
  const std::size_t d = x0.numel();
  RolloutBatch rb =
      sample_deterministic_batch(field, x0.reshaped({1, d}), grid, record, tape);

  Trajectory traj;
  traj.times = rb.times;
  traj.states = Tensor({grid.n() + 1, d});
  traj.velocities = Tensor({grid.n(), d});
  for (std::size_t k = 0; k <= grid.n(); ++k) traj.states.set_row(k, rb.states[k].row(0));
  for (std::size_t k = 0; k < grid.n(); ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      traj.velocities.at(k, j) =
          (rb.states[k + 1].at(0, j) - rb.states[k].at(0, j)) / grid.dt();
    }
  }
  traj.state_vars = std::move(rb.state_vars);
  return traj;
}

Tensor sigma_row_eval(const Tensor& log_sigma, std::size_t k, double sigma_floor) {
  if (log_sigma.ndim() != 2 || k >= log_sigma.rows()) {
    throw std::invalid_argument("sigma_row_eval: row " + std::to_string(k) +
                                " out of range for table " + log_sigma.shape_str());
  }
  Tensor sigma({log_sigma.cols()});
  for (std::size_t j = 0; j < log_sigma.cols(); ++j) {
    const double e = std::exp(log_sigma.at(k, j));
    const double over = e - sigma_floor;
    sigma[j] = (over > 0.0 ? over : 0.0) + sigma_floor;
  }
  return sigma;
}

ad::Var sigma_row_var(ad::Tape& tape, const ad::Var& log_sigma, std::size_t k,
                      double sigma_floor) {
  if (log_sigma.value.ndim() != 2 || k >= log_sigma.value.rows()) {
    throw std::invalid_argument("sigma_row_var: row " + std::to_string(k) +
                                " out of range for table " + log_sigma.value.shape_str());
  }
  const std::size_t d = log_sigma.value.cols();
  ad::Var row = tape.reshape(tape.slice(log_sigma, 0, k, 1), {d});
  ad::Var floor_vec = ad::constant(Tensor::full({d}, sigma_floor));
  return tape.add(tape.relu(tape.sub(tape.exp(row), floor_vec)), floor_vec);
}

Trajectory sample_randomized(const MlpConfig& cfg, const ParamSet& theta1,
                             const ParamSet& theta2_sigma, double sigma_floor,
                             const Tensor& x0, const TimeGrid& grid, bool randomized,
                             RngStream* rng) {
  if (x0.ndim() != 1) {
    throw std::invalid_argument("sample_randomized: x0 must be [d], got shape " + x0.shape_str());
  }
  if (!grid.has_split()) {
    throw std::invalid_argument("sample_randomized: grid needs a (n1, n2) split");
  }
  if (randomized && rng == nullptr) {
    throw std::invalid_argument("sample_randomized: randomized=true needs an RngStream");
  }
  if (randomized && !theta2_sigma.has("log_sigma")) {
    throw std::invalid_argument("sample_randomized: theta2_sigma lacks the log_sigma table");
  }
  const std::size_t d = x0.numel();
  const double dt = grid.dt();
  VelocityField f1 = field_from_params(cfg, theta1);
  VelocityField f2 = field_from_params(cfg, theta2_sigma);

  Trajectory traj;
  traj.states = Tensor({grid.n() + 1, d});
  traj.velocities = Tensor({grid.n(), d});
  for (std::size_t k = 0; k <= grid.n(); ++k) traj.times.push_back(grid.time(k));

  Tensor x = x0.reshaped({1, d});
  traj.states.set_row(0, x0);
  for (std::size_t k = 0; k < grid.n(); ++k) {
    const bool explore = k >= grid.n1();
    Tensor u = explore ? f2(x, grid.time(k)) : f1(x, grid.time(k));
    if (explore && randomized) {
      const std::size_t krow = k - grid.n1();
      if (theta2_sigma.at("log_sigma").rows() != grid.n2()) {
        throw std::invalid_argument("sample_randomized: log_sigma table has " +
                                    std::to_string(theta2_sigma.at("log_sigma").rows()) +
                                    " rows for " + std::to_string(grid.n2()) +
                                    " exploration steps");
      }
      Tensor sigma = sigma_row_eval(theta2_sigma.at("log_sigma"), krow, sigma_floor);
      double logp = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double eps = rng->normal();
        const double mu = u.at(0, j);
        u.at(0, j) = mu + sigma[j] * eps;
        const double z = (u.at(0, j) - mu) / sigma[j];
        logp += -kLogSqrt2Pi - std::log(sigma[j]) - 0.5 * z * z;
      }
      traj.log_densities.push_back(logp);
    }
    x = euler_step(x, u, dt);
    traj.states.set_row(k + 1, x.row(0));
    traj.velocities.set_row(k, u.row(0));
  }
  return traj;
}

RolloutBatch sample_randomized_batch_recorded(ad::Tape& tape, const MlpConfig& cfg,
                                              const VelocityField& field1,
                                              const ParamVars& theta2_vars,
                                              const ad::Var& log_sigma_var, double sigma_floor,
                                              const Tensor& x0, const TimeGrid& grid,
                                              RngStream& rng) {
  check_batch_x(x0, "sample_randomized_batch_recorded");
  if (!grid.has_split()) {
    throw std::invalid_argument("sample_randomized_batch_recorded: grid needs a split");
  }
  if (log_sigma_var.value.ndim() != 2 || log_sigma_var.value.rows() != grid.n2()) {
    throw std::invalid_argument(
        "sample_randomized_batch_recorded: log_sigma shape " + log_sigma_var.value.shape_str() +
        " does not provide one row per exploration step");
  }
  const double dt = grid.dt();
  const std::size_t B = x0.rows(), d = x0.cols();
  VelocityField f2 = field_from_param_vars(cfg, theta2_vars);

  RolloutBatch rb;
  for (std::size_t k = 0; k <= grid.n(); ++k) rb.times.push_back(grid.time(k));
  Tensor x = x0;
  rb.states.push_back(x);
  for (std::size_t k = 0; k < grid.n1(); ++k) {
    x = euler_step(x, field1(x, Tensor::full({B}, grid.time(k))), dt);
    rb.states.push_back(x);
  }
  for (std::size_t k = grid.n1(); k < grid.n(); ++k) {
    const std::size_t krow = k - grid.n1();
    // States are data (score-function estimator); only log pi carries grads.
    ad::Var mu = f2.record(tape, ad::constant(x), grid.time(k));
    ad::Var sigma = sigma_row_var(tape, log_sigma_var, krow, sigma_floor);
    Tensor eps = rng.normal_tensor({B, d});
    Tensor u = mu.value;
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < d; ++j) u.at(r, j) += sigma.value[j] * eps.at(r, j);
    }
    ad::Var logp = tape.gaussian_log_pdf(u, mu, sigma);
    rb.log_densities.push_back(logp.value);
    rb.log_density_vars.push_back(logp);
    x = euler_step(x, u, dt);
    rb.states.push_back(x);
  }
  return rb;
}

Tensor rollout_terminal(const VelocityField& field, const Tensor& x0, const TimeGrid& grid) {
  check_batch_x(x0, "rollout_terminal");
  const double dt = grid.dt();
  Tensor x = x0;
  Tensor tbuf({x.rows()});
  for (std::size_t k = 0; k < grid.n(); ++k) {
    std::fill(tbuf.storage().begin(), tbuf.storage().end(), grid.time(k));
    x = euler_step(x, field(x, tbuf), dt);
  }
  return x;
}

Tensor rollout_terminal_stitched(const VelocityField& field1, const VelocityField& field2,
                                 const Tensor& x0, const TimeGrid& grid) {
  check_batch_x(x0, "rollout_terminal_stitched");
  if (!grid.has_split()) {
    throw std::invalid_argument("rollout_terminal_stitched: grid needs a split");
  }
  const double dt = grid.dt();
  Tensor x = x0;
  Tensor tbuf({x.rows()});
  for (std::size_t k = 0; k < grid.n(); ++k) {
    std::fill(tbuf.storage().begin(), tbuf.storage().end(), grid.time(k));
    const VelocityField& f = k < grid.n1() ? field1 : field2;
    x = euler_step(x, f(x, tbuf), dt);
  }
  return x;
}

ad::Var fm_loss_term(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                     const Tensor& x0, const Tensor& x1, double t) {
  if (x0.ndim() != 1 || !x0.same_shape(x1)) {
    throw std::invalid_argument("fm_loss_term: x0, x1 must both be [d]");
  }
  const std::size_t d = x0.numel();
  Tensor psi = interpolant(t, x0, x1).reshaped({1, d});
  Tensor target = (x1 - x0).reshaped({1, d});
  ad::Var u = velocity_var(tape, cfg, params, ad::constant(psi),
                           ad::constant(Tensor::full({1}, t)));
  return tape.sum(tape.square(tape.sub(u, ad::constant(target))));
}

ad::Var fm_loss_batch(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                      const Tensor& x0, const Tensor& x1, const Tensor& t) {
  if (x0.ndim() != 2 || !x0.same_shape(x1) || t.numel() != x0.rows()) {
    throw std::invalid_argument("fm_loss_batch: bad shapes x0 " + x0.shape_str() + ", x1 " +
                                x1.shape_str() + ", t " + t.shape_str());
  }
  Tensor psi = interpolant_rows(t, x0, x1);
  ad::Var u = velocity_var(tape, cfg, params, ad::constant(psi), ad::constant(t));
  ad::Var sq = tape.square(tape.sub(u, ad::constant(x1 - x0)));
  return tape.scalar_mul(tape.sum(sq), 1.0 / static_cast<double>(x0.rows()));
}

}  // namespace cafm::flow
