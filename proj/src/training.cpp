#include "cafm/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace cafm::training {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Tensor draw_times(RngStream& ts, std::size_t n, TSampling mode, const flow::TimeGrid& grid) {
  Tensor t({n});
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = mode == TSampling::Continuous ? ts.uniform()
                                         : grid.time(ts.uniform_index(grid.n()));
  }
  return t;
}

Tensor draw_targets(const targets::TargetSampler& q1, std::size_t n, std::size_t d,
                    RngStream& rng, const char* who) {
  Tensor x1 = q1(n, rng);
  if (x1.ndim() != 2 || x1.rows() != n || x1.cols() != d) {
    throw std::invalid_argument(std::string(who) + ": target sampler returned shape " +
                                x1.shape_str() + ", expected [" + std::to_string(n) + "," +
                                std::to_string(d) + "]");
  }
  return x1;
}

void check_finite_loss(double v) {
  if (!std::isfinite(v)) throw std::runtime_error("non-finite loss");
}

[[noreturn]] void rethrow_at(const char* who, std::size_t iter, const std::exception& e) {
  throw std::runtime_error(std::string(who) + ": aborted at iteration " +
                           std::to_string(iter) + ": " + e.what());
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (batch1 == 0 || batch2 == 0) throw std::invalid_argument("TrainConfig: batch sizes >= 1");
  if (!(lr1 > 0.0) || !(lr2 > 0.0)) throw std::invalid_argument("TrainConfig: learning rates > 0");
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("TrainConfig: sigma_floor must be > 0");
  if (sigma_init < sigma_floor) {
    throw std::invalid_argument("TrainConfig: sigma_init must be >= sigma_floor");
  }
  if (optimizer.method != "adam" && optimizer.method != "sgd") {
    throw std::invalid_argument("TrainConfig: optimizer must be 'adam' or 'sgd', got '" +
                                optimizer.method + "'");
  }
}

Optimizer::Optimizer(const OptimizerConfig& cfg, double lr, ParamSet* params)
    : cfg_(cfg), lr_(lr), params_(params) {
  if (params == nullptr) throw std::invalid_argument("Optimizer: null parameter set");
  if (cfg.method == "adam") {
    for (const auto& [name, t] : params->entries()) {
      m_.push_back(Tensor::zeros_like(t));
      v_.push_back(Tensor::zeros_like(t));
    }
  }
}

void Optimizer::step(const std::vector<Tensor>& grads) {
  auto& entries = params_->entries();
  if (grads.size() != entries.size()) {
    throw std::invalid_argument("Optimizer: got " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(entries.size()) +
                                " parameters");
  }
  ++t_;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = entries[k].second;
    const Tensor& g = grads[k];
    if (!g.same_shape(p)) {
      throw std::invalid_argument("Optimizer: gradient shape " + g.shape_str() +
                                  " mismatches parameter '" + entries[k].first + "' " +
                                  p.shape_str());
    }
    if (cfg_.method == "sgd") {
      for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= lr_ * g[i];
    } else {
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
}

std::vector<Tensor> grads_in_order(const ad::GradMap& grads, const ParamVars& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.entries.size());
  for (const auto& [name, v] : vars.entries) out.push_back(grads.at(v));
  return out;
}

std::pair<ParamSet, TrainReport> train_fm(const TrainConfig& cfg, const MlpConfig& mcfg,
                                          const targets::TargetSampler& q1) {
  cfg.validate();
  mcfg.validate();
  const std::size_t d = mcfg.input_dim;
  ParamSet params = init_mlp_params(mcfg, derive_seed(cfg.seed, "model.init", 0));
  Optimizer opt(cfg.optimizer, cfg.lr1, &params);
  RngStream x0s(cfg.seed, "fm.x0"), x1s(cfg.seed, "fm.x1"), ts(cfg.seed, "fm.t");

  TrainReport report;
  report.seed = cfg.seed;
  for (std::size_t iter = 0; iter < cfg.iters1; ++iter) {
    const auto start = Clock::now();
    try {
      Tensor x0 = x0s.normal_tensor({cfg.batch1, d});
      Tensor x1 = draw_targets(q1, cfg.batch1, d, x1s, "train_fm");
      Tensor t = draw_times(ts, cfg.batch1, cfg.t_sampling, cfg.grid);

      ad::Tape tape;
      ParamVars vars = make_param_vars(tape, params);
      ad::Var loss = flow::fm_loss_batch(tape, mcfg, vars, x0, x1, t);
      check_finite_loss(loss.value[0]);
      ad::GradMap grads = tape.backward(loss);
      opt.step(grads_in_order(grads, vars));

      report.fm_loss.push_back(loss.value[0]);
      report.penalty.push_back(0.0);
      report.wall_ms.push_back(ms_since(start));
    } catch (const std::exception& e) {
      rethrow_at("train_fm", iter, e);
    }
  }
  return {std::move(params), std::move(report)};
}

std::pair<ParamSet, TrainReport> train_fmdd(const TrainConfig& cfg, const MlpConfig& mcfg,
                                            const targets::TargetSampler& q1,
                                            const ConstraintSet& c) {
  cfg.validate();
  mcfg.validate();
  if (!distance_available(c)) {
    throw std::invalid_argument(
        "train_fmdd: the constraint set has no usable distance; membership-only sets need "
        "the randomized-exploration trainer");
  }
  if (constraint_dim(c) != mcfg.input_dim) {
    throw std::invalid_argument("train_fmdd: constraint dimension mismatches the model");
  }
  const std::size_t d = mcfg.input_dim;
  ParamSet params = init_mlp_params(mcfg, derive_seed(cfg.seed, "model.init", 0));
  Optimizer opt(cfg.optimizer, cfg.lr1, &params);
  // Shared tags with train_fm so a lambda = 0 run replays its exact updates.
  RngStream x0s(cfg.seed, "fm.x0"), x1s(cfg.seed, "fm.x1"), ts(cfg.seed, "fm.t");
  RngStream rolls(cfg.seed, "fmdd.rollout.x0");

  TrainReport report;
  report.seed = cfg.seed;
  for (std::size_t iter = 0; iter < cfg.iters1; ++iter) {
    const auto start = Clock::now();
    try {
      Tensor x0 = x0s.normal_tensor({cfg.batch1, d});
      Tensor x1 = draw_targets(q1, cfg.batch1, d, x1s, "train_fmdd");
      // The discretization-aware variant always draws t on the Euler grid.
      Tensor t = draw_times(ts, cfg.batch1, TSampling::Grid, cfg.grid);

      ad::Tape tape;
      ParamVars vars = make_param_vars(tape, params);
      ad::Var fm = flow::fm_loss_batch(tape, mcfg, vars, x0, x1, t);
      ad::Var loss = fm;
      double penalty_value = 0.0;
      if (cfg.lambda > 0.0) {
        Tensor x0r = rolls.normal_tensor({cfg.batch1, d});
        flow::VelocityField field = flow::field_from_param_vars(mcfg, vars);
        flow::RolloutBatch rb =
            flow::sample_deterministic_batch(field, x0r, cfg.grid, true, &tape);
        ad::Var dist = set_distance_var(tape, c, rb.state_vars.back());
        ad::Var pen = tape.scalar_mul(tape.sum(dist),
                                      cfg.lambda / static_cast<double>(cfg.batch1));
        penalty_value = pen.value[0];
        loss = tape.add(fm, pen);
      }
      check_finite_loss(loss.value[0]);
      ad::GradMap grads = tape.backward(loss);
      opt.step(grads_in_order(grads, vars));

      report.fm_loss.push_back(fm.value[0]);
      report.penalty.push_back(penalty_value);
      report.wall_ms.push_back(ms_since(start));
    } catch (const std::exception& e) {
      rethrow_at("train_fmdd", iter, e);
    }
  }
  return {std::move(params), std::move(report)};
}

ad::GradMap pg_gradient(ad::Tape& tape, std::span<const flow::Trajectory> trajectories,
                        const ConstraintSet& c, bool baseline) {
  if (trajectories.empty()) {
    throw std::invalid_argument("pg_gradient: need at least one trajectory");
  }
  std::vector<double> w(trajectories.size());
  for (std::size_t m = 0; m < trajectories.size(); ++m) {
    if (trajectories[m].log_density_vars.empty()) {
      throw std::invalid_argument(
          "pg_gradient: trajectory " + std::to_string(m) +
          " carries no recorded log-densities; sample randomized on a tape first");
    }
    w[m] = contains(c, trajectories[m].x1()) ? 1.0 : 0.0;
  }
  if (baseline) {
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    for (double& v : w) v -= mean;
  }

  const double inv_m = 1.0 / static_cast<double>(trajectories.size());
  ad::Var acc;
  bool first = true;
  for (std::size_t m = 0; m < trajectories.size(); ++m) {
    ad::Var sum_logp;
    bool inner_first = true;
    for (const ad::Var& lp : trajectories[m].log_density_vars) {
      ad::Var s = lp.value.is_scalar() ? lp : tape.sum(lp);
      sum_logp = inner_first ? s : tape.add(sum_logp, s);
      inner_first = false;
    }
    ad::Var term = tape.scalar_mul(sum_logp, w[m] * inv_m);
    acc = first ? term : tape.add(acc, term);
    first = false;
  }
  return tape.backward(acc);
}

FmReResult train_fmre(const TrainConfig& cfg, const MlpConfig& mcfg,
                      const targets::TargetSampler& q1, const ConstraintSet& c) {
  cfg.validate();
  mcfg.validate();
  if (!cfg.grid.has_split()) {
    throw std::invalid_argument("train_fmre: the time grid needs an (n1, n2) split");
  }
  if (constraint_dim(c) != mcfg.input_dim) {
    throw std::invalid_argument("train_fmre: constraint dimension mismatches the model");
  }
  const std::size_t d = mcfg.input_dim;
  const std::size_t n2 = cfg.grid.n2();

  // Stage 1: plain flow matching over the whole time range.
  TrainConfig stage1 = cfg;
  stage1.t_sampling = TSampling::Continuous;
  FmReResult result;
  auto [theta1, report1] = train_fm(stage1, mcfg, q1);
  result.theta1 = std::move(theta1);
  result.report1 = std::move(report1);

  // Stage 2: theta2 starts at theta1 and gains a per-step exploration scale.
  ParamSet params2 = result.theta1;
  params2.add("log_sigma", Tensor::full({n2, d}, std::log(cfg.sigma_init)));
  Optimizer opt(cfg.optimizer, cfg.lr2, &params2);
  flow::VelocityField field1 = flow::field_from_params(mcfg, result.theta1);

  RngStream roll_x0(cfg.seed, "fmre.roll.x0"), explore(cfg.seed, "fmre.explore");
  RngStream fm_x0(cfg.seed, "fmre.fm.x0"), fm_x1(cfg.seed, "fmre.fm.x1");
  RngStream fm_i(cfg.seed, "fmre.fm.i"), fm_eps(cfg.seed, "fmre.fm.eps");

  TrainReport report2;
  report2.seed = cfg.seed;
  const std::size_t B = cfg.batch2;
  for (std::size_t iter = 0; iter < cfg.iters2; ++iter) {
    const auto start = Clock::now();
    try {
      ad::Tape tape;
      ParamVars vars = make_param_vars(tape, params2);
      const ad::Var& ls = vars.at("log_sigma");

      // Constraint term: randomized rollouts, indicator-weighted
      // log-densities (states and actions stay data).
      Tensor x0r = roll_x0.normal_tensor({B, d});
      flow::RolloutBatch rb = flow::sample_randomized_batch_recorded(
          tape, mcfg, field1, vars, ls, cfg.sigma_floor, x0r, cfg.grid, explore);
      std::vector<char> in = contains_batch(c, rb.x1());
      Tensor w({B});
      for (std::size_t b = 0; b < B; ++b) w[b] = in[b] ? 1.0 : 0.0;
      if (cfg.baseline) {
        double mean = 0.0;
        for (std::size_t b = 0; b < B; ++b) mean += w[b];
        mean /= static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) w[b] -= mean;
      }
      ad::Var weighted;
      for (std::size_t s = 0; s < rb.log_density_vars.size(); ++s) {
        ad::Var term = tape.sum(tape.mul(rb.log_density_vars[s], ad::constant(w)));
        weighted = s == 0 ? term : tape.add(weighted, term);
      }
      ad::Var l_c = tape.scalar_mul(weighted, -1.0 / static_cast<double>(B));

      // Reparameterized FM term on the exploration window.
      Tensor x0f = fm_x0.normal_tensor({B, d});
      Tensor x1f = draw_targets(q1, B, d, fm_x1, "train_fmre");
      std::vector<std::size_t> idx(B);
      Tensor t({B});
      for (std::size_t b = 0; b < B; ++b) {
        idx[b] = fm_i.uniform_index(n2);
        t[b] = cfg.grid.time(cfg.grid.n1() + idx[b]);
      }
      Tensor psi = flow::interpolant_rows(t, x0f, x1f);
      ad::Var mu = velocity_var(tape, mcfg, vars, ad::constant(psi), ad::constant(t));
      std::vector<ad::Var> sig_rows;
      for (std::size_t k = 0; k < n2; ++k) {
        sig_rows.push_back(flow::sigma_row_var(tape, ls, k, cfg.sigma_floor));
      }
      std::vector<ad::Var> picked;
      picked.reserve(B);
      for (std::size_t b = 0; b < B; ++b) {
        picked.push_back(tape.reshape(sig_rows[idx[b]], {1, d}));
      }
      ad::Var sigma_batch = tape.concat(picked, 0);
      Tensor eps = fm_eps.normal_tensor({B, d});
      ad::Var u_tilde = tape.add(mu, tape.mul(sigma_batch, ad::constant(eps)));
      ad::Var fm = tape.scalar_mul(tape.sum(tape.square(tape.sub(u_tilde, ad::constant(x1f - x0f)))),
                                   1.0 / static_cast<double>(B));

      ad::Var loss = tape.add(fm, tape.scalar_mul(l_c, cfg.lambda));
      check_finite_loss(loss.value[0]);
      ad::GradMap grads = tape.backward(loss);
      opt.step(grads_in_order(grads, vars));

      report2.fm_loss.push_back(fm.value[0]);
      report2.penalty.push_back(cfg.lambda * l_c.value[0]);
      report2.wall_ms.push_back(ms_since(start));
    } catch (const std::exception& e) {
      rethrow_at("train_fmre", iter, e);
    }
  }
  result.theta2_sigma = std::move(params2);
  result.report2 = std::move(report2);
  return result;
}

}  // namespace cafm::training
