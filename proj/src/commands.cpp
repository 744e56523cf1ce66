#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "cafm/cli.hpp"
#include "cafm/flow.hpp"

namespace cafm::cli {
namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

std::string losses_csv_text(const training::TrainReport& r) {
  std::string out = "iter,fm_loss,penalty,wall_ms\n";
  for (std::size_t i = 0; i < r.fm_loss.size(); ++i)
    out += std::to_string(i + 1) + "," + fmt_g(r.fm_loss[i]) + "," + fmt_g(r.penalty[i]) +
           "," + fmt_g(r.wall_ms[i]) + "\n";
  return out;
}

double total_ms(const std::vector<double>& wall) {
  return std::accumulate(wall.begin(), wall.end(), 0.0);
}

// In-memory result of one training dispatch; fm and fm_dd fill theta only.
struct TrainRun {
  bool two_stage = false;
  ParamSet theta;          // single-stage parameters, or stage 1 of fm_re
  ParamSet theta2_sigma;   // fm_re stage 2 (includes the log_sigma table)
  training::TrainReport report1, report2;
};

TrainRun run_training(const ExperimentConfig& cfg, const Task& task) {
  TrainRun run;
  if (cfg.method == "fm") {
    auto [params, report] = training::train_fm(cfg.train, cfg.model, task.target);
    run.theta = std::move(params);
    run.report1 = std::move(report);
  } else if (cfg.method == "fm_dd") {
    auto [params, report] =
        training::train_fmdd(cfg.train, cfg.model, task.target, task.constraint);
    run.theta = std::move(params);
    run.report1 = std::move(report);
  } else {
    training::FmReResult res =
        training::train_fmre(cfg.train, cfg.model, task.target, task.constraint);
    run.two_stage = true;
    run.theta = std::move(res.theta1);
    run.theta2_sigma = std::move(res.theta2_sigma);
    run.report1 = std::move(res.report1);
    run.report2 = std::move(res.report2);
  }
  return run;
}

// Generation for evaluation: deterministic Euler rollout from seeded noise;
// fm_re stitches the stage-1 and stage-2 mean fields at t0 (no exploration
// noise at evaluation time).
metrics::GenSampler sampler_from_run(const ExperimentConfig& cfg, const TrainRun& run) {
  const std::size_t d = cfg.model.input_dim;
  const flow::TimeGrid grid = cfg.train.grid;
  if (!run.two_stage) {
    const flow::VelocityField field = flow::field_from_params(cfg.model, run.theta);
    return [field, grid, d](std::size_t n, std::uint64_t seed) {
      RngStream rng(seed, "eval.x0");
      return flow::rollout_terminal(field, rng.normal_tensor({n, d}), grid);
    };
  }
  const flow::VelocityField f1 = flow::field_from_params(cfg.model, run.theta);
  const flow::VelocityField f2 = flow::field_from_params(cfg.model, run.theta2_sigma);
  return [f1, f2, grid, d](std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, "eval.x0");
    return flow::rollout_terminal_stitched(f1, f2, rng.normal_tensor({n, d}), grid);
  };
}

metrics::MetricsSummary evaluate_run(const ExperimentConfig& cfg, const Task& task,
                                     const TrainRun& run) {
  RngStream ref_rng(cfg.train.seed, "eval.reference");
  const Tensor reference = task.target(cfg.eval.per_trial_n, ref_rng);
  return metrics::evaluate_trials(sampler_from_run(cfg, run), task.constraint, reference,
                                  cfg.eval, cfg.train.seed);
}

std::string metrics_csv_text(const ExperimentConfig& cfg, const metrics::MetricsSummary& s) {
  return "method,task,swd_mean,swd_std,viol_mean,viol_std,dist_mean\n" + cfg.method + "," +
         cfg.task + "," + fmt_g(s.swd_mean) + "," + fmt_g(s.swd_std) + "," +
         fmt_g(s.viol_mean) + "," + fmt_g(s.viol_std) + "," + fmt_g(s.dist_mean) + "\n";
}

}  // namespace

TrainArtifacts cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const Task task = make_task(cfg.task, cfg.oracle_cmd);
  const TrainRun run = run_training(cfg, task);

  fs::create_directories(cfg.out_dir);
  TrainArtifacts art;
  art.resolved_config_path = cfg.out_dir + "/config.resolved";
  write_file(art.resolved_config_path, to_text(cfg));

  std::string report = "task: " + cfg.task + "\nmethod: " + cfg.method + "\n";
  if (run.two_stage) {
    const std::string p1 = cfg.out_dir + "/checkpoint_stage1.bin";
    const std::string p2 = cfg.out_dir + "/checkpoint_stage2.bin";
    save_checkpoint(p1, cfg.model, run.theta);
    save_checkpoint(p2, cfg.model, run.theta2_sigma);
    art.checkpoint_paths = {p1, p2};
    art.losses_csv = cfg.out_dir + "/losses.csv";
    art.losses_stage2_csv = cfg.out_dir + "/losses_stage2.csv";
    write_file(art.losses_csv, losses_csv_text(run.report1));
    write_file(art.losses_stage2_csv, losses_csv_text(run.report2));
    report += "stage1_iters: " + std::to_string(run.report1.fm_loss.size()) + "\n";
    report += "stage1_wall_ms: " + fmt_g(total_ms(run.report1.wall_ms)) + "\n";
    report += "stage2_iters: " + std::to_string(run.report2.fm_loss.size()) + "\n";
    report += "stage2_wall_ms: " + fmt_g(total_ms(run.report2.wall_ms)) + "\n";
  } else {
    const std::string p = cfg.out_dir + "/checkpoint.bin";
    save_checkpoint(p, cfg.model, run.theta);
    art.checkpoint_paths = {p};
    art.losses_csv = cfg.out_dir + "/losses.csv";
    write_file(art.losses_csv, losses_csv_text(run.report1));
    report += "iters: " + std::to_string(run.report1.fm_loss.size()) + "\n";
    report += "wall_ms: " + fmt_g(total_ms(run.report1.wall_ms)) + "\n";
  }
  for (const std::string& p : art.checkpoint_paths) report += "checkpoint: " + p + "\n";
  art.report_path = cfg.out_dir + "/report.txt";
  write_file(art.report_path, report);
  return art;
}

EvalArtifacts cmd_eval(const ExperimentConfig& cfg, std::vector<std::string> checkpoints) {
  cfg.validate();
  const Task task = make_task(cfg.task, cfg.oracle_cmd);

  if (checkpoints.empty()) {
    if (cfg.method == "fm_re")
      checkpoints = {cfg.out_dir + "/checkpoint_stage1.bin",
                     cfg.out_dir + "/checkpoint_stage2.bin"};
    else
      checkpoints = {cfg.out_dir + "/checkpoint.bin"};
  }
  const std::size_t expected = cfg.method == "fm_re" ? 2 : 1;
  if (checkpoints.size() != expected)
    throw std::invalid_argument("eval: method " + cfg.method + " needs " +
                                std::to_string(expected) + " checkpoint(s), got " +
                                std::to_string(checkpoints.size()));

  TrainRun run;
  run.two_stage = cfg.method == "fm_re";
  run.theta = load_checkpoint(checkpoints[0], cfg.model).params;
  if (run.two_stage) run.theta2_sigma = load_checkpoint(checkpoints[1], cfg.model).params;

  EvalArtifacts art;
  art.summary = evaluate_run(cfg, task, run);
  fs::create_directories(cfg.out_dir);
  art.metrics_csv = cfg.out_dir + "/metrics.csv";
  write_file(art.metrics_csv, metrics_csv_text(cfg, art.summary));
  art.resolved_config_path = cfg.out_dir + "/config.resolved";
  write_file(art.resolved_config_path, to_text(cfg));
  return art;
}

SweepArtifacts cmd_sweep(const ExperimentConfig& cfg, const SweepSpec& spec) {
  cfg.validate();
  if (spec.values.empty()) throw std::invalid_argument("sweep: no values given");
  if (spec.param != "lambda" && spec.param != "t0")
    throw std::invalid_argument("sweep: unknown param '" + spec.param +
                                "' (expected lambda|t0)");
  if (spec.param == "t0" && cfg.method != "fm_re")
    throw std::invalid_argument("sweep: param t0 requires method fm_re");
  const Task task = make_task(cfg.task, cfg.oracle_cmd);

  std::string csv = "param,value,trial,swd,viol_rate,mean_distance,train_wall_ms\n";
  for (double value : spec.values) {
    ExperimentConfig variant = cfg;
    if (spec.param == "lambda") {
      variant.train.lambda = value;
    } else {
      // Keep the total step count and move the split: N2 = round((1-t0)*N).
      const std::size_t n = cfg.train.grid.n();
      if (value < 0.0 || value >= 1.0)
        throw std::invalid_argument("sweep: t0 must lie in [0, 1), got " + fmt_g(value));
      const auto n2 = static_cast<std::size_t>(std::llround((1.0 - value) * double(n)));
      if (n2 == 0 || n2 > n)
        throw std::invalid_argument("sweep: t0 = " + fmt_g(value) +
                                    " leaves no exploration steps on a grid of " +
                                    std::to_string(n));
      variant.train.grid = flow::TimeGrid::with_split(n - n2, n2);
    }
    variant.validate();
    const TrainRun run = run_training(variant, task);
    const double wall = total_ms(run.two_stage ? run.report2.wall_ms : run.report1.wall_ms);
    const metrics::MetricsSummary s = evaluate_run(variant, task, run);
    for (std::size_t k = 0; k < s.swd_trials.size(); ++k)
      csv += spec.param + "," + fmt_g(value) + "," + std::to_string(k) + "," +
             fmt_g(s.swd_trials[k]) + "," + fmt_g(s.viol_trials[k]) + "," +
             fmt_g(s.dist_trials[k]) + "," + fmt_g(wall) + "\n";
  }

  fs::create_directories(cfg.out_dir);
  SweepArtifacts art;
  art.sweep_csv = cfg.out_dir + "/sweep.csv";
  write_file(art.sweep_csv, csv);
  art.resolved_config_path = cfg.out_dir + "/config.resolved";
  write_file(art.resolved_config_path, to_text(cfg));
  return art;
}

int cmd_gradcheck(std::ostream& out, std::uint64_t seed, std::size_t seeds_per_op,
                  const gradcheck::PgCheckConfig& pg, ad::GradMutation inject) {
  ad::set_grad_mutation(inject);
  const std::vector<gradcheck::CheckResult> results =
      gradcheck::run_all(seed, seeds_per_op, pg);
  ad::set_grad_mutation(ad::GradMutation::None);

  for (const gradcheck::CheckResult& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "%-24s max_err %11.4e  tol %8.1e  %s\n", r.name.c_str(),
                  r.max_err, r.tol, r.passed ? "ok" : "FAIL");
    out << line;
    if (!r.passed && !r.detail.empty()) out << "  " << r.detail << "\n";
  }
  const bool ok = gradcheck::all_passed(results);
  out << (ok ? "gradcheck: all checks passed\n" : "gradcheck: FAILURES detected\n");
  return ok ? 0 : 1;
}

std::string cmd_dump_data(const std::string& task_name, std::size_t n, std::uint64_t seed,
                          const std::string& path, const std::string& oracle_cmd) {
  const Task task = make_task(task_name, oracle_cmd);
  RngStream rng(seed, "dump.data");
  const Tensor x = task.target(n, rng);

  std::string csv;
  for (std::size_t j = 0; j < task.dim; ++j)
    csv += (j ? "," : "") + std::string("x") + std::to_string(j + 1);
  csv += "\n";
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < task.dim; ++j) csv += (j ? "," : "") + fmt_g(x.at(i, j));
    csv += "\n";
  }
  write_file(path, csv);
  return path;
}

}  // namespace cafm::cli
