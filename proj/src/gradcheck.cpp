#include "cafm/gradcheck.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/constraints.hpp"
#include "cafm/flow.hpp"
#include "cafm/model.hpp"
#include "cafm/rng.hpp"
#include "cafm/tensor.hpp"
#include "cafm/training.hpp"

namespace cafm::gradcheck {
namespace {

constexpr double kH = 1e-5;
constexpr double kFdTol = 1e-5;

double guarded_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
}

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}

// A differentiable test case: leaf values plus a builder that reconstructs
// the op's output from fresh leaves on any tape. All random choices (shapes,
// axes, observed data) are baked into the builder so re-evaluations under
// perturbed inputs stay structurally identical.
struct OpCase {
  std::vector<Tensor> inputs;
  std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> build;
};

ad::Var scalarize(ad::Tape& tape, const ad::Var& out, const Tensor& w, double w0) {
  if (out.value.is_scalar()) return tape.scalar_mul(out, w0);
  return tape.sum(tape.mul(out, ad::constant(w)));
}

double loss_value(const OpCase& c, const std::vector<Tensor>& inputs, const Tensor& w,
                  double w0) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& in : inputs) vars.push_back(tape.leaf(in));
  return scalarize(tape, c.build(tape, vars), w, w0).value[0];
}

// Worst guarded relative error between the tape gradient and central finite
// differences, over every coordinate of every input.
double max_case_err(const OpCase& c, RngStream& rng) {
  Tensor w;
  double w0 = 0.0;
  {
    ad::Tape probe;
    std::vector<ad::Var> vars;
    for (const Tensor& in : c.inputs) vars.push_back(probe.leaf(in));
    ad::Var out = c.build(probe, vars);
    w = rng.normal_tensor(out.value.shape());
    w0 = rng.uniform(0.5, 1.5);
  }

  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& in : c.inputs) vars.push_back(tape.leaf(in));
  ad::GradMap grads = tape.backward(scalarize(tape, c.build(tape, vars), w, w0));

  double worst = 0.0;
  std::vector<Tensor> perturbed = c.inputs;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor analytic = grads.at(vars[i]);
    for (std::size_t j = 0; j < c.inputs[i].numel(); ++j) {
      const double saved = perturbed[i][j];
      perturbed[i][j] = saved + kH;
      const double hi = loss_value(c, perturbed, w, w0);
      perturbed[i][j] = saved - kH;
      const double lo = loss_value(c, perturbed, w, w0);
      perturbed[i][j] = saved;
      worst = std::max(worst, guarded_err(analytic[j], (hi - lo) / (2.0 * kH)));
    }
  }
  return worst;
}

std::size_t dim_between(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

// 1-D [n] half the time, 2-D [n,m] otherwise.
std::vector<std::size_t> random_shape(RngStream& rng) {
  const std::size_t n = dim_between(rng, 1, 4);
  if (rng.uniform() < 0.5) return {n};
  return {n, dim_between(rng, 1, 4)};
}

Tensor away_from_zero(Tensor t, double margin) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] += t[i] >= 0.0 ? margin : -margin;
  return t;
}

Tensor positive(Tensor t, double floor) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = floor + std::abs(t[i]);
  return t;
}

using CaseGen = std::function<OpCase(RngStream&)>;

std::vector<std::pair<std::string, CaseGen>> op_registry() {
  std::vector<std::pair<std::string, CaseGen>> ops;

  auto binary = [](ad::Var (ad::Tape::*op)(const ad::Var&, const ad::Var&)) {
    return [op](RngStream& rng) {
      auto shape = random_shape(rng);
      OpCase c;
      c.inputs = {rng.normal_tensor(shape), rng.normal_tensor(shape)};
      c.build = [op](ad::Tape& t, const std::vector<ad::Var>& v) {
        return (t.*op)(v[0], v[1]);
      };
      return c;
    };
  };
  ops.emplace_back("add", binary(&ad::Tape::add));
  ops.emplace_back("sub", binary(&ad::Tape::sub));
  ops.emplace_back("mul", binary(&ad::Tape::mul));

  ops.emplace_back("matmul", [](RngStream& rng) {
    const std::size_t n = dim_between(rng, 1, 4), k = dim_between(rng, 1, 4),
                      m = dim_between(rng, 1, 4);
    OpCase c;
    c.inputs = {rng.normal_tensor({n, k}), rng.normal_tensor({k, m})};
    c.build = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.matmul(v[0], v[1]); };
    return c;
  });

  ops.emplace_back("affine", [](RngStream& rng) {
    const std::size_t n = dim_between(rng, 1, 4), k = dim_between(rng, 1, 4),
                      m = dim_between(rng, 1, 4);
    OpCase c;
    c.inputs = {rng.normal_tensor({n, k}), rng.normal_tensor({k, m}), rng.normal_tensor({m})};
    c.build = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.affine(v[0], v[1], v[2]);
    };
    return c;
  });

  auto unary = [](ad::Var (ad::Tape::*op)(const ad::Var&),
                  std::function<Tensor(RngStream&)> draw) {
    return [op, draw](RngStream& rng) {
      OpCase c;
      c.inputs = {draw(rng)};
      c.build = [op](ad::Tape& t, const std::vector<ad::Var>& v) { return (t.*op)(v[0]); };
      return c;
    };
  };
  auto plain = [](RngStream& rng) { return rng.normal_tensor(random_shape(rng)); };
  ops.emplace_back("tanh", unary(&ad::Tape::tanh, plain));
  ops.emplace_back("relu", unary(&ad::Tape::relu, [](RngStream& rng) {
                     return away_from_zero(rng.normal_tensor(random_shape(rng)), 0.25);
                   }));
  ops.emplace_back("exp", unary(&ad::Tape::exp, plain));
  ops.emplace_back("log", unary(&ad::Tape::log, [](RngStream& rng) {
                     return positive(rng.normal_tensor(random_shape(rng)), 0.3);
                   }));
  ops.emplace_back("square", unary(&ad::Tape::square, plain));
  ops.emplace_back("sum", unary(&ad::Tape::sum, plain));
  ops.emplace_back("mean", unary(&ad::Tape::mean, plain));

  ops.emplace_back("scalar_mul", [](RngStream& rng) {
    const double k = rng.uniform(-2.0, 2.0);
    OpCase c;
    c.inputs = {rng.normal_tensor(random_shape(rng))};
    c.build = [k](ad::Tape& t, const std::vector<ad::Var>& v) { return t.scalar_mul(v[0], k); };
    return c;
  });

  ops.emplace_back("reshape", [](RngStream& rng) {
    const std::size_t n = dim_between(rng, 1, 4), m = dim_between(rng, 1, 4);
    std::vector<std::size_t> to = rng.uniform() < 0.5
                                      ? std::vector<std::size_t>{n * m}
                                      : std::vector<std::size_t>{m, n};
    OpCase c;
    c.inputs = {rng.normal_tensor({n, m})};
    c.build = [to](ad::Tape& t, const std::vector<ad::Var>& v) { return t.reshape(v[0], to); };
    return c;
  });

  ops.emplace_back("concat", [](RngStream& rng) {
    const int axis = rng.uniform() < 0.5 ? 0 : 1;
    const std::size_t parts = dim_between(rng, 2, 3);
    const std::size_t shared = dim_between(rng, 1, 4);
    OpCase c;
    for (std::size_t p = 0; p < parts; ++p) {
      const std::size_t own = dim_between(rng, 1, 3);
      c.inputs.push_back(axis == 0 ? rng.normal_tensor({own, shared})
                                   : rng.normal_tensor({shared, own}));
    }
    c.build = [axis](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.concat(std::span<const ad::Var>(v.data(), v.size()), axis);
    };
    return c;
  });

  ops.emplace_back("slice", [](RngStream& rng) {
    const std::size_t n = dim_between(rng, 2, 5), m = dim_between(rng, 2, 5);
    const int axis = rng.uniform() < 0.5 ? 0 : 1;
    const std::size_t extent = axis == 0 ? n : m;
    const std::size_t start = rng.uniform_index(extent);
    const std::size_t len = 1 + rng.uniform_index(extent - start);
    OpCase c;
    c.inputs = {rng.normal_tensor({n, m})};
    c.build = [axis, start, len](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.slice(v[0], axis, start, len);
    };
    return c;
  });

  ops.emplace_back("broadcast_rows", [](RngStream& rng) {
    const std::size_t d = dim_between(rng, 1, 4), n = dim_between(rng, 1, 4);
    OpCase c;
    c.inputs = {rng.normal_tensor({d})};
    c.build = [n](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.broadcast_rows(v[0], n);
    };
    return c;
  });

  ops.emplace_back("broadcast_add", [](RngStream& rng) {
    const std::size_t n = dim_between(rng, 1, 4), d = dim_between(rng, 1, 4);
    OpCase c;
    c.inputs = {rng.normal_tensor({n, d}), rng.normal_tensor({d})};
    c.build = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.broadcast_add(v[0], v[1]);
    };
    return c;
  });

  ops.emplace_back("gaussian_log_pdf", [](RngStream& rng) {
    const std::size_t d = dim_between(rng, 1, 4);
    const int variant = static_cast<int>(rng.uniform_index(3));
    const std::size_t b = dim_between(rng, 1, 3);
    OpCase c;
    Tensor u;
    if (variant == 0) {  // [d] mu, [d] sigma -> scalar
      u = rng.normal_tensor({d});
      c.inputs = {rng.normal_tensor({d}), positive(rng.normal_tensor({d}), 0.4)};
    } else if (variant == 1) {  // [B,d] mu, shared [d] sigma -> [B]
      u = rng.normal_tensor({b, d});
      c.inputs = {rng.normal_tensor({b, d}), positive(rng.normal_tensor({d}), 0.4)};
    } else {  // [B,d] mu, per-row [B,d] sigma -> [B]
      u = rng.normal_tensor({b, d});
      c.inputs = {rng.normal_tensor({b, d}), positive(rng.normal_tensor({b, d}), 0.4)};
    }
    c.build = [u](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.gaussian_log_pdf(u, v[0], v[1]);
    };
    return c;
  });

  ops.emplace_back("time_embed", [](RngStream& rng) {
    MlpConfig cfg;
    cfg.input_dim = 2;
    cfg.sin_pairs = 1 + rng.uniform_index(4);
    const std::size_t b = dim_between(rng, 1, 4);
    OpCase c;
    c.inputs = {rng.uniform_tensor({b}, 0.05, 0.95)};
    c.build = [cfg](ad::Tape& t, const std::vector<ad::Var>& v) {
      return time_embed_var(t, cfg, v[0]);
    };
    return c;
  });

  return ops;
}

MlpConfig tiny_net() {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {5, 4};
  cfg.sin_pairs = 2;
  return cfg;
}

CheckResult fd_result(std::string name, double worst, std::string detail) {
  CheckResult r;
  r.name = std::move(name);
  r.max_err = worst;
  r.tol = kFdTol;
  r.passed = worst <= kFdTol;
  r.detail = std::move(detail);
  return r;
}

}  // namespace

std::vector<CheckResult> check_primitive_ops(std::size_t seeds, std::uint64_t seed) {
  std::vector<CheckResult> results;
  for (const auto& [name, gen] : op_registry()) {
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      RngStream rng(seed, "gradcheck." + name, s);
      OpCase c = gen(rng);
      worst = std::max(worst, max_case_err(c, rng));
    }
    results.push_back(fd_result(name, worst, std::to_string(seeds) + " random cases"));
  }
  return results;
}

std::vector<CheckResult> check_composites(std::uint64_t seed) {
  std::vector<CheckResult> results;
  const MlpConfig cfg = tiny_net();

  {  // velocity network: every parameter, input, and time coordinate
    ParamSet base = init_mlp_params(cfg, derive_seed(seed, "gradcheck.net", 0));
    RngStream rng(seed, "gradcheck.net.data");
    const Tensor x = rng.normal_tensor({3, 2});
    const Tensor tt = rng.uniform_tensor({3}, 0.05, 0.95);
    const Tensor w = rng.normal_tensor({3, 2});

    ad::Tape tape;
    ParamVars vars = make_param_vars(tape, base);
    ad::Var xv = tape.leaf(x);
    ad::Var tv = tape.leaf(tt);
    ad::Var out = velocity_var(tape, cfg, vars, xv, tv);
    ad::GradMap grads = tape.backward(tape.sum(tape.mul(out, ad::constant(w))));

    auto eval = [&](const ParamSet& p, const Tensor& xx, const Tensor& ts) {
      const Tensor o = velocity_eval(cfg, p, xx, ts);
      double s = 0.0;
      for (std::size_t i = 0; i < o.numel(); ++i) s += o[i] * w[i];
      return s;
    };

    double worst = 0.0;
    std::size_t coords = 0;
    ParamSet p = base;
    for (std::size_t e = 0; e < p.entries().size(); ++e) {
      const Tensor analytic = grads.at(vars.entries[e].second);
      Tensor& t = p.entries()[e].second;
      for (std::size_t j = 0; j < t.numel(); ++j, ++coords) {
        const double saved = t[j];
        t[j] = saved + kH;
        const double hi = eval(p, x, tt);
        t[j] = saved - kH;
        const double lo = eval(p, x, tt);
        t[j] = saved;
        worst = std::max(worst, guarded_err(analytic[j], (hi - lo) / (2.0 * kH)));
      }
    }
    Tensor xp = x;
    const Tensor gx = grads.at(xv);
    for (std::size_t j = 0; j < xp.numel(); ++j, ++coords) {
      const double saved = xp[j];
      xp[j] = saved + kH;
      const double hi = eval(base, xp, tt);
      xp[j] = saved - kH;
      const double lo = eval(base, xp, tt);
      xp[j] = saved;
      worst = std::max(worst, guarded_err(gx[j], (hi - lo) / (2.0 * kH)));
    }
    Tensor tp = tt;
    const Tensor gt = grads.at(tv);
    for (std::size_t j = 0; j < tp.numel(); ++j, ++coords) {
      const double saved = tp[j];
      tp[j] = saved + kH;
      const double hi = eval(base, x, tp);
      tp[j] = saved - kH;
      const double lo = eval(base, x, tp);
      tp[j] = saved;
      worst = std::max(worst, guarded_err(gt[j], (hi - lo) / (2.0 * kH)));
    }
    results.push_back(
        fd_result("velocity_net", worst, std::to_string(coords) + " coordinates"));
  }

  {  // pathwise gradients through a recorded 3-step Euler rollout
    ParamSet base = init_mlp_params(cfg, derive_seed(seed, "gradcheck.roll", 0));
    RngStream rng(seed, "gradcheck.roll.data");
    const Tensor x0 = rng.normal_tensor({2, 2});
    const Tensor w = rng.normal_tensor({2, 2});
    const flow::TimeGrid grid = flow::TimeGrid::uniform(3);

    ad::Tape tape;
    ParamVars vars = make_param_vars(tape, base);
    flow::VelocityField field = flow::field_from_param_vars(cfg, vars);
    flow::RolloutBatch rb = flow::sample_deterministic_batch(field, x0, grid, true, &tape);
    ad::GradMap grads =
        tape.backward(tape.sum(tape.mul(rb.state_vars.back(), ad::constant(w))));

    auto eval = [&](const ParamSet& p) {
      const Tensor x1 = flow::rollout_terminal(flow::field_from_params(cfg, p), x0, grid);
      double s = 0.0;
      for (std::size_t i = 0; i < x1.numel(); ++i) s += x1[i] * w[i];
      return s;
    };

    double worst = 0.0;
    std::size_t coords = 0;
    ParamSet p = base;
    for (std::size_t e = 0; e < p.entries().size(); ++e) {
      const Tensor analytic = grads.at(vars.entries[e].second);
      Tensor& t = p.entries()[e].second;
      for (std::size_t j = 0; j < t.numel(); ++j, ++coords) {
        const double saved = t[j];
        t[j] = saved + kH;
        const double hi = eval(p);
        t[j] = saved - kH;
        const double lo = eval(p);
        t[j] = saved;
        worst = std::max(worst, guarded_err(analytic[j], (hi - lo) / (2.0 * kH)));
      }
    }
    results.push_back(
        fd_result("euler_rollout", worst, std::to_string(coords) + " coordinates"));
  }

  return results;
}

CheckResult check_policy_gradient(std::uint64_t seed, const PgCheckConfig& cfg) {
  double worst_z = 0.0;
  for (std::size_t k = 0; k < cfg.triples; ++k) {
    RngStream setup(seed, "gradcheck.pg.setup", k);
    const double mu0 = setup.uniform(-1.0, 1.0);
    const double sigma0 = setup.uniform(0.5, 1.5);
    const double a = mu0 + sigma0 * setup.uniform(-1.5, 1.5);
    const double alpha = (a - mu0) / sigma0;
    const double true_dmu = norm_pdf(alpha) / sigma0;
    const double true_dls = alpha * norm_pdf(alpha);
    const ConstraintSet half_line =
        make_box({a}, {std::numeric_limits<double>::infinity()});

    ad::Tape tape;
    ad::Var mu = tape.leaf(Tensor::from({mu0}));
    ad::Var ls = tape.leaf(Tensor({1, 1}, {std::log(sigma0)}));
    ad::Var sigma = flow::sigma_row_var(tape, ls, 0, 1e-8);
    RngStream rng(seed, "gradcheck.pg.path", k);

    const std::size_t m_total = cfg.trajectories;
    std::vector<flow::Trajectory> trajs(m_total);
    std::vector<double> g_mu(m_total), g_ls(m_total);
    for (std::size_t m = 0; m < m_total; ++m) {
      const double eps = rng.normal();
      const double u = mu0 + sigma0 * eps;
      flow::Trajectory& tr = trajs[m];
      tr.times = {0.0, 1.0};
      tr.states = Tensor({2, 1}, {0.0, u});
      tr.velocities = Tensor({1, 1}, {u});
      tr.log_density_vars.push_back(tape.gaussian_log_pdf(Tensor::from({u}), mu, sigma));
      tr.log_densities.push_back(tr.log_density_vars.back().value[0]);
      const double ind = u >= a ? 1.0 : 0.0;
      g_mu[m] = ind * eps / sigma0;
      g_ls[m] = ind * (eps * eps - 1.0);
    }
    ad::GradMap grads = training::pg_gradient(tape, trajs, half_line);
    const double est_mu = grads.at(mu)[0];
    const double est_ls = grads.at(ls)[0];

    double mean_mu = 0.0, mean_ls = 0.0;
    for (std::size_t m = 0; m < m_total; ++m) {
      mean_mu += g_mu[m];
      mean_ls += g_ls[m];
    }
    mean_mu /= static_cast<double>(m_total);
    mean_ls /= static_cast<double>(m_total);
    double var_mu = 0.0, var_ls = 0.0;
    for (std::size_t m = 0; m < m_total; ++m) {
      var_mu += (g_mu[m] - mean_mu) * (g_mu[m] - mean_mu);
      var_ls += (g_ls[m] - mean_ls) * (g_ls[m] - mean_ls);
    }
    var_mu /= static_cast<double>(m_total - 1);
    var_ls /= static_cast<double>(m_total - 1);
    const double se_mu = std::sqrt(var_mu / static_cast<double>(m_total));
    const double se_ls = std::sqrt(var_ls / static_cast<double>(m_total));

    worst_z = std::max(worst_z, std::abs(est_mu - true_dmu) / se_mu);
    worst_z = std::max(worst_z, std::abs(est_ls - true_dls) / se_ls);
  }

  CheckResult r;
  r.name = "policy_gradient";
  r.max_err = worst_z;
  r.tol = cfg.z_tol;
  r.passed = worst_z <= cfg.z_tol;
  r.detail = "worst |z| over " + std::to_string(cfg.triples) + " (mu, sigma, a) triples, " +
             std::to_string(cfg.trajectories) + " trajectories each";
  return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed, std::size_t seeds_per_op,
                                 const PgCheckConfig& pg) {
  std::vector<CheckResult> results = check_primitive_ops(seeds_per_op, seed);
  for (CheckResult& r : check_composites(seed)) results.push_back(std::move(r));
  results.push_back(check_policy_gradient(seed, pg));
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

}  // namespace cafm::gradcheck
