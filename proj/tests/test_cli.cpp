#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cafm/cli.hpp"
#include "cafm/flow.hpp"
#include "doctest.h"

using namespace cafm;
using cli::ExperimentConfig;

TEST_SUITE_BEGIN("cli");

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(bool(in), "missing file: ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

// Tiny budgets so the whole suite stays in seconds.
ExperimentConfig tiny_config(const std::string& task, const std::string& method) {
  ExperimentConfig cfg = cli::default_config(task, method);
  cfg.train.grid = method == "fm_re" ? flow::TimeGrid::with_split(4, 2)
                                     : flow::TimeGrid::uniform(6);
  cfg.train.iters1 = 12;
  cfg.train.iters2 = 6;
  cfg.train.batch1 = 16;
  cfg.train.batch2 = 8;
  cfg.train.lambda = method == "fm" ? 0.0 : 2.0;
  cfg.model.hidden = {16, 16};
  cfg.eval.trials = 2;
  cfg.eval.per_trial_n = 64;
  cfg.eval.n_proj = 16;
  return cfg;
}

}  // namespace

TEST_CASE("ini parse, lookup, and round trip") {
  const std::string text =
      "# comment\n"
      "[experiment]\n"
      "task = ball8\n"
      "\n"
      "[train]\n"
      "lambda = 2.5\n"
      "lambda = 3.5\n";  // later assignment wins
  cli::IniFile f = cli::IniFile::parse(text);
  CHECK(f.has("experiment", "task"));
  CHECK(f.get("experiment", "task") == "ball8");
  CHECK(f.get("train", "lambda") == "3.5");
  CHECK(f.get_or("train", "missing", "fallback") == "fallback");
  CHECK_THROWS_WITH_AS(f.get("train", "missing"), doctest::Contains("train.missing"),
                       std::invalid_argument);

  f.set("train", "lr1", "0.01");
  cli::IniFile again = cli::IniFile::parse(f.to_text());
  CHECK(again.to_text() == f.to_text());

  CHECK_THROWS_AS(cli::IniFile::parse("key = 1\n"), std::invalid_argument);   // no section
  CHECK_THROWS_AS(cli::IniFile::parse("[open\nk = v\n"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::IniFile::parse("[s]\nno equals sign\n"),
                       doctest::Contains("line 2"), std::invalid_argument);
}

TEST_CASE("per-task defaults carry the reference settings") {
  ExperimentConfig box = cli::default_config("box", "fm_re");
  CHECK(box.train.lambda == 80.0);
  REQUIRE(box.train.grid.has_split());
  CHECK(box.train.grid.n1() == 60);
  CHECK(box.train.grid.n2() == 15);
  CHECK(box.model.input_dim == 2);

  ExperimentConfig ball = cli::default_config("ball20", "fm_dd");
  CHECK(ball.train.lambda == 20.0);
  CHECK_FALSE(ball.train.grid.has_split());
  CHECK(ball.train.grid.n() == 75);
  CHECK(ball.model.input_dim == 20);

  ExperimentConfig sub = cli::default_config("subspace", "fm_re");
  CHECK(sub.train.lambda == 1.0);
  CHECK(sub.train.grid.n1() == 60);
  CHECK(sub.train.grid.n2() == 10);
  CHECK(sub.model.input_dim == 10);

  CHECK(box.train.iters1 == 5000);
  CHECK(box.train.iters2 == 2000);
  CHECK(box.train.batch1 == 256);
  CHECK(box.train.batch2 == 64);
  CHECK(box.model.hidden == std::vector<std::size_t>{128, 128, 128});
  CHECK(box.eval.trials == 10);
  CHECK(box.eval.per_trial_n == 2000);
}

TEST_CASE("config text round trips and overrides apply") {
  for (auto [task, method] : std::vector<std::pair<std::string, std::string>>{
           {"box", "fm"}, {"ball8", "fm_dd"}, {"subspace", "fm_re"}}) {
    ExperimentConfig cfg = cli::default_config(task, method);
    const std::string text = cli::to_text(cfg);
    CHECK(cli::to_text(cli::config_from_text(text)) == text);
  }

  ExperimentConfig cfg = cli::config_from_text(
      "[experiment]\n"
      "task = ball8\n"
      "method = fm_re\n"
      "out_dir = runs/x\n"
      "[train]\n"
      "lambda = 3.5\n"
      "iters1 = 7\n"
      "seed = 42\n"
      "t_sampling = grid\n"
      "[model]\n"
      "hidden = 8,4\n"
      "activation = relu\n"
      "[eval]\n"
      "trials = 3\n");
  CHECK(cfg.task == "ball8");
  CHECK(cfg.out_dir == "runs/x");
  CHECK(cfg.train.lambda == 3.5);
  CHECK(cfg.train.iters1 == 7);
  CHECK(cfg.train.seed == 42);
  CHECK(cfg.train.t_sampling == training::TSampling::Grid);
  CHECK(cfg.train.grid.n1() == 60);  // untouched fm_re default split
  CHECK(cfg.model.hidden == std::vector<std::size_t>{8, 4});
  CHECK(cfg.model.activation == Activation::Relu);
  CHECK(cfg.eval.trials == 3);

  ExperimentConfig grid = cli::config_from_text("[train]\nn = 10\n");
  CHECK(grid.train.grid.n() == 10);
  ExperimentConfig split = cli::config_from_text(
      "[experiment]\nmethod = fm_re\n[train]\nn1 = 3\nn2 = 2\n");
  CHECK(split.train.grid.t0() == doctest::Approx(0.6));

  CHECK_THROWS_WITH_AS(cli::config_from_text("[train]\nn1 = 3\n"),
                       doctest::Contains("together"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::config_from_text("[train]\nlambda = abc\n"),
                       doctest::Contains("train.lambda"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::config_from_text("[model]\nactivation = gelu\n"),
                       doctest::Contains("model.activation"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::config_from_text("[train]\nbaseline = maybe\n"),
                       doctest::Contains("train.baseline"), std::invalid_argument);
}

TEST_CASE("validate rejects incompatible and malformed configs") {
  ExperimentConfig ok = tiny_config("box", "fm");
  CHECK_NOTHROW(ok.validate());

  ExperimentConfig bad_method = ok;
  bad_method.method = "diffusion";
  CHECK_THROWS_WITH_AS(bad_method.validate(), doctest::Contains("unknown method"),
                       std::invalid_argument);

  ExperimentConfig oracle = tiny_config("box", "fm_dd");
  oracle.task = "custom-oracle";
  oracle.oracle_cmd = "true";
  CHECK_THROWS_WITH_AS(oracle.validate(), doctest::Contains("distance unavailable"),
                       std::invalid_argument);
  oracle.method = "fm_re";
  oracle.train.grid = flow::TimeGrid::with_split(4, 2);
  CHECK_NOTHROW(oracle.validate());

  ExperimentConfig no_split = tiny_config("box", "fm_re");
  no_split.train.grid = flow::TimeGrid::uniform(6);
  CHECK_THROWS_WITH_AS(no_split.validate(), doctest::Contains("n1"), std::invalid_argument);

  ExperimentConfig wrong_dim = tiny_config("ball8", "fm");
  wrong_dim.model.input_dim = 2;
  CHECK_THROWS_WITH_AS(wrong_dim.validate(), doctest::Contains("dimension"),
                       std::invalid_argument);

  CHECK_THROWS_WITH_AS(cli::make_task("torus"), doctest::Contains("unknown task"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::make_task("custom-oracle"), doctest::Contains("oracle_cmd"),
                       std::invalid_argument);
  CHECK(cli::task_names().size() == 6);
}

TEST_CASE("task targets live inside their constraint sets") {
  for (const std::string& name : {"box", "two_boxes", "ball8", "ball20", "subspace"}) {
    cli::Task task = cli::make_task(name);
    RngStream rng(3, "cli.task", 0);
    Tensor x = task.target(200, rng);
    CHECK(x.rows() == 200);
    CHECK(x.cols() == task.dim);
    CHECK(metrics::violation_rate(x, task.constraint) == 0.0);
  }
  cli::Task sub = cli::make_task("subspace");
  RngStream rng(4, "cli.task.sub");
  Tensor x = sub.target(50, rng);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 10.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j);
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("dump-data writes deterministic in-set samples") {
  const std::string p1 = "test_cli_dump1.csv";
  const std::string p2 = "test_cli_dump2.csv";
  CHECK(cli::cmd_dump_data("two_boxes", 100, 5, p1) == p1);
  cli::cmd_dump_data("two_boxes", 100, 5, p2);
  const std::string text = slurp(p1);
  CHECK(text == slurp(p2));

  std::vector<std::string> lines = split_lines(text);
  REQUIRE(lines.size() == 101);
  CHECK(lines[0] == "x1,x2");
  cli::Task task = cli::make_task("two_boxes");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string a, b;
    REQUIRE(std::getline(ss, a, ','));
    REQUIRE(std::getline(ss, b, ','));
    CHECK(contains(task.constraint, Tensor({2}, {std::stod(a), std::stod(b)})));
  }

  cli::cmd_dump_data("subspace", 20, 5, p1);
  for (std::size_t i = 1; i < 21; ++i) {
    std::stringstream ss(split_lines(slurp(p1))[i]);
    std::string cell;
    double s = 10.0;
    while (std::getline(ss, cell, ',')) s += std::stod(cell);
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("train command writes the full artifact set") {
  ExperimentConfig cfg = tiny_config("box", "fm");
  cfg.out_dir = "test_cli_out/fm";
  cli::TrainArtifacts art = cli::cmd_train(cfg);

  REQUIRE(art.checkpoint_paths.size() == 1);
  Checkpoint ck = load_checkpoint(art.checkpoint_paths[0], cfg.model);
  CHECK(ck.params.total_size() > 0);

  const std::string losses = slurp(art.losses_csv);
  std::vector<std::string> lines = split_lines(losses);
  REQUIRE(lines.size() == cfg.train.iters1 + 1);
  CHECK(lines[0] == "iter,fm_loss,penalty,wall_ms");
  CHECK(lines[1].substr(0, 2) == "1,");
  CHECK(art.losses_stage2_csv.empty());

  const std::string resolved = slurp(art.resolved_config_path);
  CHECK(resolved == cli::to_text(cfg));
  CHECK(cli::to_text(cli::config_from_text(resolved)) == resolved);
  CHECK(slurp(art.report_path).find("method: fm") != std::string::npos);
}

TEST_CASE("train command: two-stage method writes both checkpoints") {
  ExperimentConfig cfg = tiny_config("box", "fm_re");
  cfg.out_dir = "test_cli_out/fmre";
  cli::TrainArtifacts art = cli::cmd_train(cfg);

  REQUIRE(art.checkpoint_paths.size() == 2);
  Checkpoint stage2 = load_checkpoint(art.checkpoint_paths[1], cfg.model);
  CHECK(stage2.params.has("log_sigma"));
  CHECK(stage2.params.at("log_sigma").rows() == cfg.train.grid.n2());

  CHECK(count_lines(slurp(art.losses_csv)) == cfg.train.iters1 + 1);
  CHECK(count_lines(slurp(art.losses_stage2_csv)) == cfg.train.iters2 + 1);
}

TEST_CASE("eval command: untrained model on ball20 violates almost always") {
  ExperimentConfig cfg = tiny_config("ball20", "fm");
  cfg.out_dir = "test_cli_out/ball20";
  std::filesystem::create_directories(cfg.out_dir);
  const std::string ckpt = cfg.out_dir + "/untrained.bin";
  save_checkpoint(ckpt, cfg.model, init_mlp_params(cfg.model, 3));

  cli::EvalArtifacts art = cli::cmd_eval(cfg, {ckpt});
  CHECK(art.summary.viol_mean > 0.9);
  CHECK(art.summary.trials == cfg.eval.trials);

  const std::string text = slurp(art.metrics_csv);
  std::vector<std::string> lines = split_lines(text);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "method,task,swd_mean,swd_std,viol_mean,viol_std,dist_mean");
  CHECK(lines[1].substr(0, 10) == "fm,ball20,");

  // Identical config and checkpoint reproduce identical bytes.
  cli::EvalArtifacts again = cli::cmd_eval(cfg, {ckpt});
  CHECK(slurp(again.metrics_csv) == text);

  CHECK_THROWS_WITH_AS(cli::cmd_eval(cfg, {ckpt, ckpt}), doctest::Contains("checkpoint"),
                       std::invalid_argument);
  ExperimentConfig missing = cfg;
  missing.out_dir = "test_cli_out/nowhere";
  CHECK_THROWS_AS(cli::cmd_eval(missing), std::runtime_error);
}

TEST_CASE("train then eval with default checkpoint paths") {
  ExperimentConfig cfg = tiny_config("box", "fm_re");
  cfg.out_dir = "test_cli_out/roundtrip";
  cli::cmd_train(cfg);
  cli::EvalArtifacts art = cli::cmd_eval(cfg);
  CHECK(art.summary.trials == 2);
  CHECK(art.summary.swd_mean > 0.0);
  CHECK(std::isfinite(art.summary.dist_mean));
}

TEST_CASE("sweep command: lambda rows and paired t0 splits") {
  ExperimentConfig cfg = tiny_config("box", "fm_dd");
  cfg.out_dir = "test_cli_out/sweep_lambda";
  cli::SweepArtifacts art = cli::cmd_sweep(cfg, {"lambda", {0.5, 2.0}});
  std::vector<std::string> lines = split_lines(slurp(art.sweep_csv));
  REQUIRE(lines.size() == 1 + 2 * cfg.eval.trials);
  CHECK(lines[0] == "param,value,trial,swd,viol_rate,mean_distance,train_wall_ms");
  CHECK(lines[1].substr(0, 11) == "lambda,0.5,");
  CHECK(lines[1 + cfg.eval.trials].substr(0, 9) == "lambda,2,");

  ExperimentConfig re = tiny_config("box", "fm_re");
  re.out_dir = "test_cli_out/sweep_t0";
  cli::SweepArtifacts t0 = cli::cmd_sweep(re, {"t0", {0.5}});
  lines = split_lines(slurp(t0.sweep_csv));
  REQUIRE(lines.size() == 1 + re.eval.trials);  // paired: one setting per value
  CHECK(lines[1].substr(0, 7) == "t0,0.5,");

  CHECK_THROWS_WITH_AS(cli::cmd_sweep(cfg, {"lambda", {}}), doctest::Contains("no values"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_sweep(cfg, {"gamma", {1.0}}),
                       doctest::Contains("unknown param"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_sweep(cfg, {"t0", {0.5}}), doctest::Contains("fm_re"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_sweep(re, {"t0", {0.99}}),
                       doctest::Contains("exploration"), std::invalid_argument);
}

TEST_CASE("gradcheck command reports per-check lines and exit status") {
  std::ostringstream out;
  const int rc = cli::cmd_gradcheck(out, 11, 2, {2, 8000, 4.0});
  CHECK(rc == 0);
  const std::string text = out.str();
  CHECK(text.find("policy_gradient") != std::string::npos);
  CHECK(text.find("all checks passed") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);

  std::ostringstream bad;
  const int rc_bad =
      cli::cmd_gradcheck(bad, 11, 2, {1, 2000, 6.0}, ad::GradMutation::GaussianSigmaGradSign);
  CHECK(rc_bad == 1);
  CHECK(bad.str().find("gaussian_log_pdf") != std::string::npos);
  CHECK(bad.str().find("FAIL") != std::string::npos);
  CHECK(ad::grad_mutation() == ad::GradMutation::None);  // restored afterwards
}

TEST_SUITE_END();
