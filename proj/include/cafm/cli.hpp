#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/constraints.hpp"
#include "cafm/gradcheck.hpp"
#include "cafm/metrics.hpp"
#include "cafm/model.hpp"
#include "cafm/targets.hpp"
#include "cafm/training.hpp"

namespace cafm::cli {

// Flat INI-style configuration text: `[section]` headers, `key = value`
// lines, '#' comments. Sections and keys keep insertion order so that
// serialization is deterministic and files round-trip byte-stably.
class IniFile {
 public:
  static IniFile parse(const std::string& text);
  static IniFile load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  // Throws std::invalid_argument naming "section.key" when absent.
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     std::string fallback) const;
  void set(const std::string& section, const std::string& key, std::string value);
  std::string to_text() const;

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections_;
};

// A runnable experiment: what to generate (task), how to train (method +
// hyperparameters), and how to evaluate.
struct ExperimentConfig {
  std::string task = "box";    // box|two_boxes|ball8|ball20|subspace|custom-oracle
  std::string method = "fm";   // fm|fm_dd|fm_re
  std::string out_dir = "runs/out";
  std::string oracle_cmd;      // membership subprocess for custom-oracle
  std::size_t workers = 1;     // accepted for compatibility; execution is serial
  training::TrainConfig train;
  MlpConfig model;
  metrics::EvalSpec eval;

  void validate() const;  // field-level messages; task/method compatibility
};

// Per-task defaults: penalty weight and time-grid split used as reference settings for the
// synthetic experiments, plus desk-scale budgets.
ExperimentConfig default_config(const std::string& task, const std::string& method);
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);
std::string to_text(const ExperimentConfig& cfg);

// Constraint + target distribution bundle behind a task tag.
struct Task {
  std::string name;
  std::size_t dim = 2;
  ConstraintSet constraint;
  targets::TargetSampler target;
  bool distance_available = true;
};
Task make_task(const std::string& name, const std::string& oracle_cmd = "");
const std::vector<std::string>& task_names();

// train: fits the configured method, writing under cfg.out_dir:
//   checkpoint.bin                      (fm, fm_dd)
//   checkpoint_stage1.bin / _stage2.bin (fm_re)
//   losses.csv [losses_stage2.csv]      per-iteration `iter,fm_loss,penalty,wall_ms`
//   report.txt                          wall times and artifact paths
//   config.resolved                     full config echo; re-running it
//                                       reproduces every artifact except the
//                                       wall-time columns
struct TrainArtifacts {
  std::vector<std::string> checkpoint_paths;
  std::string losses_csv;
  std::string losses_stage2_csv;  // fm_re only, else empty
  std::string report_path;
  std::string resolved_config_path;
};
TrainArtifacts cmd_train(const ExperimentConfig& cfg);

// eval: mean-flow sampling from the checkpoint(s), metrics over seeded
// trials against a fresh reference draw from the task target. Passing no
// checkpoints uses the paths cmd_train would have written under out_dir.
// Writes metrics.csv: `method,task,swd_mean,swd_std,viol_mean,viol_std,dist_mean`.
struct EvalArtifacts {
  std::string metrics_csv;
  std::string resolved_config_path;
  metrics::MetricsSummary summary;
};
EvalArtifacts cmd_eval(const ExperimentConfig& cfg, std::vector<std::string> checkpoints = {});

// sweep: retrains and evaluates per value. param "lambda" varies the penalty
// weight; param "t0" pairs (t0, N2 = (1-t0)*N) on the method fm_re. Writes
// sweep.csv: `param,value,trial,swd,viol_rate,mean_distance,train_wall_ms`
// (wall time is the stage-2 loop for fm_re, the single loop otherwise,
// repeated across the setting's rows).
struct SweepSpec {
  std::string param;           // "lambda" | "t0"
  std::vector<double> values;  // must be nonempty
};
struct SweepArtifacts {
  std::string sweep_csv;
  std::string resolved_config_path;
};
SweepArtifacts cmd_sweep(const ExperimentConfig& cfg, const SweepSpec& spec);

// gradcheck: runs the full gradient self-check suite, printing one line per
// check (name, worst error, threshold, status) and a final verdict. Returns
// 0 iff everything passed. `inject` corrupts one backward rule first so the
// suite can demonstrate it catches wrong derivatives.
int cmd_gradcheck(std::ostream& out, std::uint64_t seed, std::size_t seeds_per_op,
                  const gradcheck::PgCheckConfig& pg,
                  ad::GradMutation inject = ad::GradMutation::None);

// dump-data: writes n target samples as CSV (`x1,...,xd` header, 17
// significant digits). Returns the path written.
std::string cmd_dump_data(const std::string& task, std::size_t n, std::uint64_t seed,
                          const std::string& path, const std::string& oracle_cmd = "");

}  // namespace cafm::cli
