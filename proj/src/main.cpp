#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cafm/cli.hpp"

namespace {

using cafm::cli::ExperimentConfig;

// Options shared by train/eval/sweep. --config is exclusive with
// --task/--method (per-task defaults are derived from the pair; overriding
// half of a loaded file would silently mix settings).
struct CommonOpts {
  std::string config_path;
  std::string task = "box";
  std::string method = "fm";
  std::string out;
  std::string oracle_cmd;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  CLI::Option* seed_o = nullptr;
  CLI::Option* out_o = nullptr;
  CLI::Option* oracle_o = nullptr;
  CLI::Option* workers_o = nullptr;

  void add(CLI::App* sub) {
    CLI::Option* config_o =
        sub->add_option("--config", config_path, "experiment config file")
            ->check(CLI::ExistingFile);
    config_o->excludes(sub->add_option("--task", task, "task tag (default box)"));
    config_o->excludes(sub->add_option("--method", method, "fm|fm_dd|fm_re (default fm)"));
    seed_o = sub->add_option("--seed", seed, "root seed (overrides config)");
    out_o = sub->add_option("--out", out, "output directory (overrides config)");
    oracle_o = sub->add_option("--oracle-cmd", oracle_cmd, "membership subprocess");
    workers_o = sub->add_option("--workers", workers, "accepted for compatibility; serial");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? cafm::cli::default_config(task, method)
                                               : cafm::cli::config_from_file(config_path);
    if (seed_o->count()) cfg.train.seed = seed;
    if (out_o->count()) cfg.out_dir = out;
    if (oracle_o->count()) cfg.oracle_cmd = oracle_cmd;
    if (workers_o->count()) cfg.workers = workers;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint-aware flow matching: training, evaluation, sweeps"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "fit a model; write checkpoint(s) and logs");
  train_opts.add(train);

  CommonOpts eval_opts;
  std::vector<std::string> eval_checkpoints;
  CLI::App* eval = app.add_subcommand("eval", "sample a checkpoint and compute metrics");
  eval_opts.add(eval);
  eval->add_option("checkpoints", eval_checkpoints,
                   "checkpoint file(s); default: the train outputs under --out");

  CommonOpts sweep_opts;
  cafm::cli::SweepSpec sweep_spec;
  CLI::App* sweep = app.add_subcommand("sweep", "retrain and evaluate across a parameter");
  sweep_opts.add(sweep);
  sweep->add_option("--param", sweep_spec.param, "lambda | t0")->required();
  sweep->add_option("--values", sweep_spec.values, "comma-separated values")
      ->required()
      ->delimiter(',');

  std::uint64_t gc_seed = 7;
  std::size_t gc_seeds_per_op = 100;
  cafm::gradcheck::PgCheckConfig gc_pg;
  cafm::ad::GradMutation gc_inject = cafm::ad::GradMutation::None;
  const std::map<std::string, cafm::ad::GradMutation> inject_names{
      {"none", cafm::ad::GradMutation::None},
      {"gaussian-sigma-grad-sign", cafm::ad::GradMutation::GaussianSigmaGradSign},
      {"tanh-grad-scale", cafm::ad::GradMutation::TanhGradScale},
      {"matmul-left-grad-sign", cafm::ad::GradMutation::MatmulLeftGradSign}};
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference and estimator self-checks");
  gradcheck->add_option("--seed", gc_seed, "root seed");
  gradcheck->add_option("--seeds-per-op", gc_seeds_per_op, "random cases per primitive op");
  gradcheck->add_option("--triples", gc_pg.triples, "policy-gradient (mu,sigma,a) settings");
  gradcheck->add_option("--trajectories", gc_pg.trajectories, "paths per setting");
  gradcheck->add_option("--z-tol", gc_pg.z_tol, "allowed |z|-score");
  gradcheck
      ->add_option("--inject", gc_inject, "corrupt one backward rule to prove detection")
      ->transform(CLI::CheckedTransformer(inject_names, CLI::ignore_case));

  std::string dump_task, dump_path, dump_oracle;
  std::size_t dump_n = 0;
  std::uint64_t dump_seed = 1;
  CLI::App* dump = app.add_subcommand("dump-data", "write target-distribution samples as CSV");
  dump->add_option("--task", dump_task, "task tag")->required();
  dump->add_option("--n", dump_n, "number of samples")->required();
  dump->add_option("--seed", dump_seed, "root seed");
  dump->add_option("--out", dump_path, "output CSV path")->required();
  dump->add_option("--oracle-cmd", dump_oracle, "membership subprocess");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) {
      const cafm::cli::TrainArtifacts art = cafm::cli::cmd_train(train_opts.resolve());
      for (const std::string& p : art.checkpoint_paths) std::cout << "checkpoint " << p << "\n";
      std::cout << "losses " << art.losses_csv << "\n";
      if (!art.losses_stage2_csv.empty()) std::cout << "losses " << art.losses_stage2_csv << "\n";
      std::cout << "report " << art.report_path << "\n";
      std::cout << "config " << art.resolved_config_path << "\n";
    } else if (app.got_subcommand(eval)) {
      const cafm::cli::EvalArtifacts art =
          cafm::cli::cmd_eval(eval_opts.resolve(), eval_checkpoints);
      std::cout << "metrics " << art.metrics_csv << "\n";
      std::cout << "swd " << art.summary.swd_mean << " +- " << art.summary.swd_std
                << "  viol " << art.summary.viol_mean << " +- " << art.summary.viol_std
                << "  dist " << art.summary.dist_mean << "\n";
    } else if (app.got_subcommand(sweep)) {
      const cafm::cli::SweepArtifacts art = cafm::cli::cmd_sweep(sweep_opts.resolve(), sweep_spec);
      std::cout << "sweep " << art.sweep_csv << "\n";
    } else if (app.got_subcommand(gradcheck)) {
      return cafm::cli::cmd_gradcheck(std::cout, gc_seed, gc_seeds_per_op, gc_pg, gc_inject);
    } else {
      std::cout << "data "
                << cafm::cli::cmd_dump_data(dump_task, dump_n, dump_seed, dump_path, dump_oracle)
                << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
