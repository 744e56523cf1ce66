#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "cafm/model.hpp"
#include "cafm/rng.hpp"
#include "doctest.h"
#include "support/finite_diff.hpp"

using namespace cafm;
using ad::Tape;
using ad::Var;
using cafm::testing::finite_diff;
using cafm::testing::rel_max_err;

namespace {

MlpConfig small_config() {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {8, 8};
  cfg.sin_pairs = 3;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("init is deterministic in (config, seed) with Xavier bounds and zero biases") {
  MlpConfig cfg = small_config();
  ParamSet p1 = init_mlp_params(cfg, 7);
  ParamSet p2 = init_mlp_params(cfg, 7);
  ParamSet p3 = init_mlp_params(cfg, 8);

  CHECK(p1.flatten() == p2.flatten());
  CHECK(p1.flatten() != p3.flatten());

  // First layer: fan_in = input_dim + embed, fan_out = hidden[0]
  const double bound0 = std::sqrt(6.0 / (2 + 6 + 8));
  const Tensor& w0 = p1.at("w0");
  double max_abs = 0;
  for (std::size_t i = 0; i < w0.numel(); ++i) max_abs = std::max(max_abs, std::abs(w0[i]));
  CHECK(max_abs <= bound0);
  CHECK(max_abs > 0.5 * bound0);  // not degenerate

  const Tensor& b0 = p1.at("b0");
  for (std::size_t i = 0; i < b0.numel(); ++i) CHECK(b0[i] == 0.0);

  CHECK(p1.has("w2"));  // output layer exists
  CHECK(p1.at("w2").cols() == 2);
}

TEST_CASE("velocity output shape and input validation") {
  MlpConfig cfg = small_config();
  ParamSet params = init_mlp_params(cfg, 0);
  RngStream rng(1, "x");
  Tensor x = rng.normal_tensor({5, 2});

  Tensor u = velocity_eval(cfg, params, x, 0.25);
  CHECK(u.rows() == 5);
  CHECK(u.cols() == 2);

  CHECK_THROWS_AS(velocity_eval(cfg, params, rng.normal_tensor({5, 3}), 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(velocity_eval(cfg, params, x, Tensor({3})), std::invalid_argument);
  CHECK_THROWS_AS(velocity_eval(cfg, params, x, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(velocity_eval(cfg, params, x, -0.5), std::invalid_argument);
}

TEST_CASE("tape and plain velocity paths agree bitwise") {
  MlpConfig cfg = small_config();
  ParamSet params = init_mlp_params(cfg, 3);
  RngStream rng(2, "x");
  Tensor x = rng.normal_tensor({4, 2});
  Tensor t = rng.uniform_tensor({4}, 0.0, 1.0);

  Tensor plain = velocity_eval(cfg, params, x, t);

  Tape tape;
  ParamVars vars = make_param_vars(tape, params);
  Var u = velocity_var(tape, cfg, vars, ad::constant(x), ad::constant(t));

  REQUIRE(plain.same_shape(u.value));
  for (std::size_t i = 0; i < plain.numel(); ++i) CHECK(plain[i] == u.value[i]);
}

TEST_CASE("velocity is differentiable w.r.t. x, t and every parameter") {
  MlpConfig cfg = small_config();
  ParamSet params = init_mlp_params(cfg, 5);
  RngStream rng(4, "fd");
  Tensor x = rng.normal_tensor({3, 2});
  Tensor t = rng.uniform_tensor({3}, 0.05, 0.95);
  Tensor w = rng.uniform_tensor({3, 2}, 0.5, 1.5);

  // analytic gradients
  Tape tape;
  ParamVars pv = make_param_vars(tape, params);
  Var xv = tape.leaf(x);
  Var tv = tape.leaf(t);
  Var loss = tape.sum(tape.mul(velocity_var(tape, cfg, pv, xv, tv), ad::constant(w)));
  ad::GradMap grads = tape.backward(loss);

  // finite differences w.r.t. x and t
  auto fx = [&](const std::vector<Tensor>& in) {
    return cafm::sum(velocity_eval(cfg, params, in[0], in[1]) * w);
  };
  std::vector<Tensor> fd_xt = finite_diff(fx, {x, t});
  CHECK(rel_max_err(grads.at(xv), fd_xt[0]) < 1e-6);
  CHECK(rel_max_err(grads.at(tv), fd_xt[1]) < 1e-6);

  // finite differences w.r.t. each parameter tensor
  for (const auto& [name, _] : params.entries()) {
    CAPTURE(name);
    auto fp = [&](const std::vector<Tensor>& in) {
      ParamSet p = params;
      p.at(name) = in[0];
      return cafm::sum(velocity_eval(cfg, p, x, t) * w);
    };
    std::vector<Tensor> fd = finite_diff(fp, {params.at(name)});
    CHECK(rel_max_err(grads.at(pv.at(name)), fd[0]) < 1e-6);
  }
}

TEST_CASE("raw time embedding works and changes dimensions") {
  MlpConfig cfg = small_config();
  cfg.time_embedding = TimeEmbedding::RawScalar;
  CHECK(cfg.embed_dim() == 1);
  ParamSet params = init_mlp_params(cfg, 0);
  CHECK(params.at("w0").rows() == 3);  // 2 + 1

  Tensor emb = time_embed_eval(cfg, Tensor::from({0.3, 0.9}));
  CHECK(emb.rows() == 2);
  CHECK(emb.cols() == 1);
  CHECK(emb.at(1, 0) == 0.9);
}

TEST_CASE("sinusoidal embedding values and derivative") {
  MlpConfig cfg = small_config();
  Tensor emb = time_embed_eval(cfg, Tensor::from({0.25}));
  CHECK(emb.cols() == 6);
  CHECK(emb.at(0, 0) == doctest::Approx(std::sin(M_PI * 0.25)));
  CHECK(emb.at(0, 1) == doctest::Approx(std::cos(M_PI * 0.25)));
  CHECK(emb.at(0, 2) == doctest::Approx(std::sin(2 * M_PI * 0.25)));
  CHECK(emb.at(0, 5) == doctest::Approx(std::cos(4 * M_PI * 0.25)));

  RngStream rng(6, "emb");
  Tensor t = rng.uniform_tensor({4}, 0.0, 1.0);
  Tensor w = rng.uniform_tensor({4, 6}, 0.5, 1.5);
  Tape tape;
  Var tv = tape.leaf(t);
  Var loss = tape.sum(tape.mul(time_embed_var(tape, cfg, tv), ad::constant(w)));
  Tensor g = tape.backward(loss).at(tv);
  auto f = [&](const std::vector<Tensor>& in) {
    return cafm::sum(time_embed_eval(cfg, in[0]) * w);
  };
  CHECK(rel_max_err(g, finite_diff(f, {t})[0]) < 1e-6);
}

TEST_CASE("flatten and assign_flat are inverses") {
  ParamSet p = init_mlp_params(small_config(), 9);
  std::vector<double> flat = p.flatten();
  ParamSet q = init_mlp_params(small_config(), 10);
  q.assign_flat(flat);
  CHECK(q.flatten() == flat);
  flat.pop_back();
  CHECK_THROWS_AS(q.assign_flat(flat), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  MlpConfig cfg = small_config();
  ParamSet params = init_mlp_params(cfg, 11);
  params.add("log_sigma", RngStream(1, "sig").normal_tensor({4, 2}));

  const std::string path = "test_model_ckpt.bin";
  save_checkpoint(path, cfg, params);
  Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.config == cfg);
  REQUIRE(loaded.params.entries().size() == params.entries().size());
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    CHECK(loaded.params.entries()[i].first == params.entries()[i].first);
    const Tensor& a = loaded.params.entries()[i].second;
    const Tensor& b = params.entries()[i].second;
    REQUIRE(a.same_shape(b));
    for (std::size_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);  // exact bits
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint errors: magic, truncation, config mismatch") {
  MlpConfig cfg = small_config();
  ParamSet params = init_mlp_params(cfg, 12);
  const std::string path = "test_model_ckpt2.bin";
  save_checkpoint(path, cfg, params);

  SUBCASE("dimension mismatch is named") {
    MlpConfig other = cfg;
    other.input_dim = 3;
    CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("input_dim"),
                         std::runtime_error);
    MlpConfig ok = cfg;
    CHECK_NOTHROW(load_checkpoint(path, ok));
  }
  SUBCASE("bad magic") {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    std::fputs("XXXX", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);
  }
  SUBCASE("truncated file") {
    Checkpoint full = load_checkpoint(path);
    std::FILE* f = std::fopen(path.c_str(), "ab");
    std::fclose(f);
    // rewrite shorter
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_SUITE_END();
