#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "cafm/cli.hpp"

namespace cafm::cli {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_field(const std::string& field, const std::string& why,
                            const std::string& value) {
  throw std::invalid_argument("config: " + field + ": " + why + ": '" + value + "'");
}

double to_double(const std::string& field, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty())
    bad_field(field, "not a number", v);
  return x;
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty() || v[0] == '-')
    bad_field(field, "not a non-negative integer", v);
  return x;
}

bool to_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_field(field, "not a boolean (true/false)", v);
}

std::vector<std::size_t> to_size_list(const std::string& field, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) bad_field(field, "empty list entry", v);
    out.push_back(static_cast<std::size_t>(to_u64(field, part)));
  }
  if (out.empty()) bad_field(field, "empty list", v);
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile f;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": malformed section header: " + t);
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value': " + t);
    if (section.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": key outside any [section]: " + t);
    f.set(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return f;
}

IniFile IniFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  for (const Section& s : sections_)
    if (s.name == section)
      for (const auto& [k, v] : s.entries)
        if (k == key) return true;
  return false;
}

const std::string& IniFile::get(const std::string& section, const std::string& key) const {
  for (const Section& s : sections_)
    if (s.name == section)
      for (const auto& [k, v] : s.entries)
        if (k == key) return v;
  throw std::invalid_argument("config: missing " + section + "." + key);
}

std::string IniFile::get_or(const std::string& section, const std::string& key,
                            std::string fallback) const {
  return has(section, key) ? get(section, key) : std::move(fallback);
}

void IniFile::set(const std::string& section, const std::string& key, std::string value) {
  for (Section& s : sections_)
    if (s.name == section) {
      for (auto& [k, v] : s.entries)
        if (k == key) {
          v = std::move(value);
          return;
        }
      s.entries.emplace_back(key, std::move(value));
      return;
    }
  sections_.push_back({section, {{key, std::move(value)}}});
}

std::string IniFile::to_text() const {
  std::string out;
  for (const Section& s : sections_) {
    out += "[" + s.name + "]\n";
    for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
    out += "\n";
  }
  return out;
}

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"box",    "two_boxes",    "ball8",
                                                 "ball20", "subspace", "custom-oracle"};
  return names;
}

Task make_task(const std::string& name, const std::string& oracle_cmd) {
  Task t;
  t.name = name;
  if (name == "box") {
    t.dim = 2;
    t.constraint = make_box({-4.0, -4.0}, {4.0, 4.0});
    t.target = [](std::size_t n, RngStream& rng) { return targets::sample_box_gmm(n, rng); };
  } else if (name == "two_boxes") {
    t.dim = 2;
    t.constraint = TwoBoxes{};
    t.target = [](std::size_t n, RngStream& rng) {
      return targets::sample_two_boxes_uniform(n, rng);
    };
  } else if (name == "ball8" || name == "ball20") {
    t.dim = name == "ball8" ? 8 : 20;
    t.constraint = L2Ball{t.dim, 1.0};
    const std::size_t d = t.dim;
    t.target = [d](std::size_t n, RngStream& rng) {
      return targets::sample_ball_gmm(n, d, rng);
    };
  } else if (name == "subspace") {
    t.dim = targets::kSubspaceDim;
    t.constraint = Hyperplane{Tensor::full({targets::kSubspaceDim}, 1.0), 10.0, 5e-4};
    t.target = [](std::size_t n, RngStream& rng) {
      return targets::sample_subspace_gaussian(n, rng);
    };
  } else if (name == "custom-oracle") {
    if (oracle_cmd.empty())
      throw std::invalid_argument("config: task custom-oracle requires oracle_cmd");
    t.dim = 2;
    t.constraint = make_external_oracle(oracle_cmd, 2);
    t.target = [](std::size_t n, RngStream& rng) { return targets::sample_box_gmm(n, rng); };
    t.distance_available = false;
  } else {
    std::string all;
    for (const std::string& n : task_names()) all += (all.empty() ? "" : "|") + n;
    throw std::invalid_argument("config: unknown task '" + name + "' (expected " + all + ")");
  }
  return t;
}

ExperimentConfig default_config(const std::string& task, const std::string& method) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.method = method;
  // Published penalty weights and exploration splits for the synthetic tasks.
  double lambda = 80.0;
  std::size_t n1 = 60, n2 = 15;
  if (task == "ball8" || task == "ball20") lambda = 20.0;
  if (task == "subspace") {
    lambda = 1.0;
    n2 = 10;
  }
  cfg.train.lambda = lambda;
  // Deterministic methods integrate on the same total step count N1+N2 that
  // the split exploration grid uses, keeping comparisons step-matched.
  cfg.train.grid = method == "fm_re" ? flow::TimeGrid::with_split(n1, n2)
                                     : flow::TimeGrid::uniform(n1 + n2);
  cfg.model.input_dim = task == "custom-oracle" ? 2 : make_task(task, "x").dim;
  return cfg;
}

ExperimentConfig config_from_text(const std::string& text) {
  const IniFile f = IniFile::parse(text);
  const std::string task = f.get_or("experiment", "task", "box");
  const std::string method = f.get_or("experiment", "method", "fm");
  ExperimentConfig cfg = default_config(task, method);

  cfg.out_dir = f.get_or("experiment", "out_dir", cfg.out_dir);
  cfg.oracle_cmd = f.get_or("experiment", "oracle_cmd", cfg.oracle_cmd);
  if (f.has("experiment", "workers"))
    cfg.workers = to_u64("experiment.workers", f.get("experiment", "workers"));

  training::TrainConfig& tr = cfg.train;
  if (f.has("train", "lambda")) tr.lambda = to_double("train.lambda", f.get("train", "lambda"));
  const bool has_split_keys = f.has("train", "n1") || f.has("train", "n2");
  if (has_split_keys) {
    if (!f.has("train", "n1") || !f.has("train", "n2"))
      throw std::invalid_argument("config: train.n1 and train.n2 must be given together");
    tr.grid = flow::TimeGrid::with_split(
        to_u64("train.n1", f.get("train", "n1")),
        to_u64("train.n2", f.get("train", "n2")));
  } else if (f.has("train", "n")) {
    tr.grid = flow::TimeGrid::uniform(to_u64("train.n", f.get("train", "n")));
  }
  if (f.has("train", "lr1")) tr.lr1 = to_double("train.lr1", f.get("train", "lr1"));
  if (f.has("train", "lr2")) tr.lr2 = to_double("train.lr2", f.get("train", "lr2"));
  if (f.has("train", "batch1")) tr.batch1 = to_u64("train.batch1", f.get("train", "batch1"));
  if (f.has("train", "batch2")) tr.batch2 = to_u64("train.batch2", f.get("train", "batch2"));
  if (f.has("train", "iters1")) tr.iters1 = to_u64("train.iters1", f.get("train", "iters1"));
  if (f.has("train", "iters2")) tr.iters2 = to_u64("train.iters2", f.get("train", "iters2"));
  if (f.has("train", "seed")) tr.seed = to_u64("train.seed", f.get("train", "seed"));
  if (f.has("train", "optimizer")) tr.optimizer.method = f.get("train", "optimizer");
  if (f.has("train", "beta1"))
    tr.optimizer.beta1 = to_double("train.beta1", f.get("train", "beta1"));
  if (f.has("train", "beta2"))
    tr.optimizer.beta2 = to_double("train.beta2", f.get("train", "beta2"));
  if (f.has("train", "eps")) tr.optimizer.eps = to_double("train.eps", f.get("train", "eps"));
  if (f.has("train", "sigma_floor"))
    tr.sigma_floor = to_double("train.sigma_floor", f.get("train", "sigma_floor"));
  if (f.has("train", "sigma_init"))
    tr.sigma_init = to_double("train.sigma_init", f.get("train", "sigma_init"));
  if (f.has("train", "baseline"))
    tr.baseline = to_bool("train.baseline", f.get("train", "baseline"));
  if (f.has("train", "t_sampling")) {
    const std::string& v = f.get("train", "t_sampling");
    if (v == "continuous") tr.t_sampling = training::TSampling::Continuous;
    else if (v == "grid") tr.t_sampling = training::TSampling::Grid;
    else bad_field("train.t_sampling", "expected continuous|grid", v);
  }

  MlpConfig& m = cfg.model;
  if (f.has("model", "hidden")) m.hidden = to_size_list("model.hidden", f.get("model", "hidden"));
  if (f.has("model", "activation")) {
    const std::string& v = f.get("model", "activation");
    if (v == "tanh") m.activation = Activation::Tanh;
    else if (v == "relu") m.activation = Activation::Relu;
    else bad_field("model.activation", "expected tanh|relu", v);
  }
  if (f.has("model", "time_embedding")) {
    const std::string& v = f.get("model", "time_embedding");
    if (v == "sinusoidal") m.time_embedding = TimeEmbedding::Sinusoidal;
    else if (v == "raw") m.time_embedding = TimeEmbedding::RawScalar;
    else bad_field("model.time_embedding", "expected sinusoidal|raw", v);
  }
  if (f.has("model", "sin_pairs"))
    m.sin_pairs = to_u64("model.sin_pairs", f.get("model", "sin_pairs"));

  metrics::EvalSpec& ev = cfg.eval;
  if (f.has("eval", "trials")) ev.trials = to_u64("eval.trials", f.get("eval", "trials"));
  if (f.has("eval", "per_trial_n"))
    ev.per_trial_n = to_u64("eval.per_trial_n", f.get("eval", "per_trial_n"));
  if (f.has("eval", "n_proj")) ev.n_proj = to_u64("eval.n_proj", f.get("eval", "n_proj"));
  if (f.has("eval", "p")) ev.p = to_double("eval.p", f.get("eval", "p"));

  return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  IniFile f;
  f.set("experiment", "task", cfg.task);
  f.set("experiment", "method", cfg.method);
  f.set("experiment", "out_dir", cfg.out_dir);
  f.set("experiment", "oracle_cmd", cfg.oracle_cmd);
  f.set("experiment", "workers", std::to_string(cfg.workers));

  const training::TrainConfig& tr = cfg.train;
  f.set("train", "lambda", fmt_double(tr.lambda));
  if (tr.grid.has_split()) {
    f.set("train", "n1", std::to_string(tr.grid.n1()));
    f.set("train", "n2", std::to_string(tr.grid.n2()));
  } else {
    f.set("train", "n", std::to_string(tr.grid.n()));
  }
  f.set("train", "lr1", fmt_double(tr.lr1));
  f.set("train", "lr2", fmt_double(tr.lr2));
  f.set("train", "batch1", std::to_string(tr.batch1));
  f.set("train", "batch2", std::to_string(tr.batch2));
  f.set("train", "iters1", std::to_string(tr.iters1));
  f.set("train", "iters2", std::to_string(tr.iters2));
  f.set("train", "seed", std::to_string(tr.seed));
  f.set("train", "optimizer", tr.optimizer.method);
  f.set("train", "beta1", fmt_double(tr.optimizer.beta1));
  f.set("train", "beta2", fmt_double(tr.optimizer.beta2));
  f.set("train", "eps", fmt_double(tr.optimizer.eps));
  f.set("train", "sigma_floor", fmt_double(tr.sigma_floor));
  f.set("train", "sigma_init", fmt_double(tr.sigma_init));
  f.set("train", "baseline", tr.baseline ? "true" : "false");
  f.set("train", "t_sampling",
        tr.t_sampling == training::TSampling::Continuous ? "continuous" : "grid");

  f.set("model", "hidden", join_sizes(cfg.model.hidden));
  f.set("model", "activation", cfg.model.activation == Activation::Tanh ? "tanh" : "relu");
  f.set("model", "time_embedding",
        cfg.model.time_embedding == TimeEmbedding::Sinusoidal ? "sinusoidal" : "raw");
  f.set("model", "sin_pairs", std::to_string(cfg.model.sin_pairs));

  f.set("eval", "trials", std::to_string(cfg.eval.trials));
  f.set("eval", "per_trial_n", std::to_string(cfg.eval.per_trial_n));
  f.set("eval", "n_proj", std::to_string(cfg.eval.n_proj));
  f.set("eval", "p", fmt_double(cfg.eval.p));

  return f.to_text();
}

void ExperimentConfig::validate() const {
  if (method != "fm" && method != "fm_dd" && method != "fm_re")
    throw std::invalid_argument("config: unknown method '" + method +
                                "' (expected fm|fm_dd|fm_re)");
  const Task t = make_task(task, task == "custom-oracle" ? oracle_cmd : "");
  if (method == "fm_dd" && !t.distance_available)
    throw std::invalid_argument("config: method fm_dd on task '" + task +
                                "': distance unavailable (membership oracle only)");
  if (method == "fm_re" && !train.grid.has_split())
    throw std::invalid_argument("config: method fm_re needs train.n1/train.n2");
  if (model.input_dim != t.dim)
    throw std::invalid_argument("config: model input dimension " +
                                std::to_string(model.input_dim) + " does not match task '" +
                                task + "' dimension " + std::to_string(t.dim));
  if (workers < 1) throw std::invalid_argument("config: experiment.workers must be >= 1");
  if (eval.trials < 1) throw std::invalid_argument("config: eval.trials must be >= 1");
  if (eval.per_trial_n < 2) throw std::invalid_argument("config: eval.per_trial_n must be >= 2");
  if (eval.n_proj < 1) throw std::invalid_argument("config: eval.n_proj must be >= 1");
  if (eval.p < 1.0) throw std::invalid_argument("config: eval.p must be >= 1");
  train.validate();
  model.validate();
}

}  // namespace cafm::cli
