#include "cafm/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cafm/rng.hpp"

namespace cafm {

namespace {

constexpr double kTimeTol = 1e-9;

void check_time_entries(const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!(t[i] >= -kTimeTol && t[i] <= 1.0 + kTimeTol)) {
      throw std::invalid_argument("velocity: time entry " + std::to_string(t[i]) +
                                  " outside [0, 1]");
    }
  }
}

std::vector<std::size_t> layer_inputs(const MlpConfig& cfg) {
  std::vector<std::size_t> in;
  in.push_back(cfg.input_dim + cfg.embed_dim());
  for (std::size_t h : cfg.hidden) in.push_back(h);
  return in;
}

std::vector<std::size_t> layer_outputs(const MlpConfig& cfg) {
  std::vector<std::size_t> out = cfg.hidden;
  out.push_back(cfg.input_dim);
  return out;
}

// Plain forward kernels; the tape ops compute values with identical
// arithmetic so both paths agree bitwise.
Tensor affine_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += b[j];
  return out;
}

void activate_inplace(Tensor& h, Activation a) {
  if (a == Activation::Tanh) {
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] = std::tanh(h[i]);
  } else {
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] = h[i] > 0.0 ? h[i] : 0.0;
  }
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

}  // namespace

std::size_t MlpConfig::embed_dim() const {
  return time_embedding == TimeEmbedding::RawScalar ? 1 : 2 * sin_pairs;
}

void MlpConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("MlpConfig: input_dim must be positive");
  if (hidden.empty()) throw std::invalid_argument("MlpConfig: needs at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("MlpConfig: hidden widths must be positive");
  }
  if (time_embedding == TimeEmbedding::Sinusoidal && sin_pairs == 0) {
    throw std::invalid_argument("MlpConfig: sin_pairs must be positive");
  }
}

std::string to_text(const MlpConfig& cfg) {
  std::ostringstream out;
  out << "input_dim=" << cfg.input_dim << "\n";
  out << "hidden=";
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) out << (i ? "," : "") << cfg.hidden[i];
  out << "\n";
  out << "activation=" << (cfg.activation == Activation::Tanh ? "tanh" : "relu") << "\n";
  out << "time_embedding="
      << (cfg.time_embedding == TimeEmbedding::RawScalar ? "raw" : "sinusoidal") << "\n";
  out << "sin_pairs=" << cfg.sin_pairs << "\n";
  return out.str();
}

MlpConfig mlp_config_from_text(const std::string& text) {
  MlpConfig cfg;
  cfg.hidden.clear();
  bool saw[5] = {false, false, false, false, false};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("MlpConfig: malformed line '" + line + "'");
    }
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "input_dim") {
      cfg.input_dim = std::stoul(val);
      saw[0] = true;
    } else if (key == "hidden") {
      std::istringstream hs(val);
      std::string tok;
      while (std::getline(hs, tok, ',')) cfg.hidden.push_back(std::stoul(tok));
      saw[1] = true;
    } else if (key == "activation") {
      if (val == "tanh") cfg.activation = Activation::Tanh;
      else if (val == "relu") cfg.activation = Activation::Relu;
      else throw std::invalid_argument("MlpConfig: unknown activation '" + val + "'");
      saw[2] = true;
    } else if (key == "time_embedding") {
      if (val == "raw") cfg.time_embedding = TimeEmbedding::RawScalar;
      else if (val == "sinusoidal") cfg.time_embedding = TimeEmbedding::Sinusoidal;
      else throw std::invalid_argument("MlpConfig: unknown time_embedding '" + val + "'");
      saw[3] = true;
    } else if (key == "sin_pairs") {
      cfg.sin_pairs = std::stoul(val);
      saw[4] = true;
    } else {
      throw std::invalid_argument("MlpConfig: unknown key '" + key + "'");
    }
  }
  const char* names[5] = {"input_dim", "hidden", "activation", "time_embedding", "sin_pairs"};
  for (int i = 0; i < 5; ++i) {
    if (!saw[i]) throw std::invalid_argument(std::string("MlpConfig: missing key '") + names[i] + "'");
  }
  cfg.validate();
  return cfg;
}

void ParamSet::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("ParamSet: duplicate name '" + name + "'");
  entries_.emplace_back(name, std::move(t));
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& [_, t] : entries_) {
    flat.insert(flat.end(), t.storage().begin(), t.storage().end());
  }
  return flat;
}

void ParamSet::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != total_size()) {
    throw std::invalid_argument("ParamSet::assign_flat: got " + std::to_string(flat.size()) +
                                " values for " + std::to_string(total_size()) + " parameters");
  }
  std::size_t off = 0;
  for (auto& [_, t] : entries_) {
    std::copy(flat.begin() + off, flat.begin() + off + t.numel(), t.storage().begin());
    off += t.numel();
  }
}

ParamSet init_mlp_params(const MlpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet params;
  const auto ins = layer_inputs(cfg);
  const auto outs = layer_outputs(cfg);
  for (std::size_t l = 0; l < ins.size(); ++l) {
    RngStream rng(seed, "model.init", l);
    const double a = std::sqrt(6.0 / static_cast<double>(ins[l] + outs[l]));
    params.add("w" + std::to_string(l), rng.uniform_tensor({ins[l], outs[l]}, -a, a));
    params.add("b" + std::to_string(l), Tensor({outs[l]}));
  }
  return params;
}

const ad::Var& ParamVars::at(const std::string& name) const {
  for (const auto& [n, v] : entries) {
    if (n == name) return v;
  }
  throw std::invalid_argument("ParamVars: no parameter named '" + name + "'");
}

bool ParamVars::has(const std::string& name) const {
  for (const auto& [n, _] : entries) {
    if (n == name) return true;
  }
  return false;
}

ParamVars make_param_vars(ad::Tape& tape, const ParamSet& params) {
  ParamVars vars;
  for (const auto& [name, t] : params.entries()) vars.entries.emplace_back(name, tape.leaf(t));
  return vars;
}

Tensor time_embed_eval(const MlpConfig& cfg, const Tensor& t) {
  if (t.ndim() != 1) {
    throw std::invalid_argument("time_embed: t must be 1-D, got shape " + t.shape_str());
  }
  const std::size_t n = t.numel();
  if (cfg.time_embedding == TimeEmbedding::RawScalar) {
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i) out.at(i, 0) = t[i];
    return out;
  }
  Tensor out({n, 2 * cfg.sin_pairs});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.sin_pairs; ++j) {
      const double w = std::ldexp(std::numbers::pi, static_cast<int>(j));  // 2^j * pi
      out.at(i, 2 * j) = std::sin(w * t[i]);
      out.at(i, 2 * j + 1) = std::cos(w * t[i]);
    }
  }
  return out;
}

ad::Var time_embed_var(ad::Tape& tape, const MlpConfig& cfg, const ad::Var& t) {
  Tensor value = time_embed_eval(cfg, t.value);
  const std::size_t n = t.value.numel();
  const bool raw = cfg.time_embedding == TimeEmbedding::RawScalar;
  const std::size_t pairs = cfg.sin_pairs;
  Tensor emb = value;
  std::vector<ad::Var> parents = {t};
  return tape.record("time_embed", parents, std::move(value),
                     [n, raw, pairs, emb](const Tensor& g) {
                       Tensor dt({n});
                       if (raw) {
                         for (std::size_t i = 0; i < n; ++i) dt[i] = g.at(i, 0);
                       } else {
                         for (std::size_t i = 0; i < n; ++i) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < pairs; ++j) {
                             const double w = std::ldexp(std::numbers::pi, static_cast<int>(j));
                             acc += g.at(i, 2 * j) * w * emb.at(i, 2 * j + 1);      // d sin = w cos
                             acc -= g.at(i, 2 * j + 1) * w * emb.at(i, 2 * j);      // d cos = -w sin
                           }
                           dt[i] = acc;
                         }
                       }
                       return std::vector<Tensor>{std::move(dt)};
                     });
}

Tensor velocity_eval(const MlpConfig& cfg, const ParamSet& params, const Tensor& x,
                     const Tensor& t) {
  if (x.ndim() != 2 || x.cols() != cfg.input_dim) {
    throw std::invalid_argument("velocity: x shape " + x.shape_str() + " does not match input_dim " +
                                std::to_string(cfg.input_dim));
  }
  if (t.numel() != x.rows()) {
    throw std::invalid_argument("velocity: t has " + std::to_string(t.numel()) +
                                " entries for batch of " + std::to_string(x.rows()));
  }
  check_time_entries(t);
  Tensor h = concat_cols(x, time_embed_eval(cfg, t));
  const std::size_t layers = cfg.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = affine_fwd(h, params.at("w" + std::to_string(l)), params.at("b" + std::to_string(l)));
    if (l + 1 < layers) activate_inplace(h, cfg.activation);
  }
  return h;
}

Tensor velocity_eval(const MlpConfig& cfg, const ParamSet& params, const Tensor& x, double t) {
  return velocity_eval(cfg, params, x, Tensor::full({x.ndim() == 2 ? x.rows() : 1}, t));
}

ad::Var velocity_var(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                     const ad::Var& x, const ad::Var& t) {
  if (x.value.ndim() != 2 || x.value.cols() != cfg.input_dim) {
    throw std::invalid_argument("velocity: x shape " + x.value.shape_str() +
                                " does not match input_dim " + std::to_string(cfg.input_dim));
  }
  if (t.value.numel() != x.value.rows()) {
    throw std::invalid_argument("velocity: t has " + std::to_string(t.value.numel()) +
                                " entries for batch of " + std::to_string(x.value.rows()));
  }
  check_time_entries(t.value);
  ad::Var emb = time_embed_var(tape, cfg, t);
  std::vector<ad::Var> parts = {x, emb};
  ad::Var h = tape.concat(parts, 1);
  const std::size_t layers = cfg.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.affine(h, params.at("w" + std::to_string(l)), params.at("b" + std::to_string(l)));
    if (l + 1 < layers) {
      h = cfg.activation == Activation::Tanh ? tape.tanh(h) : tape.relu(h);
    }
  }
  return h;
}

// --- checkpoint serialization ----------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'A', 'F', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpConfig& cfg, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");

  std::ostringstream text;
  text << to_text(cfg);
  for (const auto& [name, t] : params.entries()) {
    text << "param " << name;
    for (std::size_t s : t.shape()) text << ' ' << s;
    text << "\n";
  }
  const std::string header = text.str();

  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u64(out, params.total_size());
  for (const auto& [_, t] : params.entries()) {
    for (double d : t.storage()) write_u64(out, std::bit_cast<std::uint64_t>(d));
  }
  if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");

  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t text_len = read_u32(in);
  std::string header(text_len, '\0');
  if (!in.read(header.data(), text_len)) {
    throw std::runtime_error("checkpoint: unexpected end of file");
  }

  // Split header into config lines and parameter layout lines.
  std::string cfg_text;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      std::string name;
      ls >> name;
      std::vector<std::size_t> shape;
      std::size_t s;
      while (ls >> s) shape.push_back(s);
      layout.emplace_back(name, shape);
    } else if (!line.empty()) {
      cfg_text += line + "\n";
    }
  }

  Checkpoint ckpt;
  ckpt.config = mlp_config_from_text(cfg_text);
  const std::uint64_t count = read_u64(in);
  std::size_t expected = 0;
  for (const auto& [name, shape] : layout) {
    Tensor t(shape);
    expected += t.numel();
    ckpt.params.add(name, std::move(t));
  }
  if (count != expected) {
    throw std::runtime_error("checkpoint: layout declares " + std::to_string(expected) +
                             " values but file stores " + std::to_string(count));
  }
  std::vector<double> flat;
  flat.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    flat.push_back(std::bit_cast<double>(read_u64(in)));
  }
  ckpt.params.assign_flat(flat);
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path, const MlpConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  const MlpConfig& got = ckpt.config;
  auto fail = [&](const std::string& field) {
    throw std::runtime_error("checkpoint: config mismatch on " + field + " in '" + path + "'");
  };
  if (got.input_dim != expected.input_dim) fail("input_dim");
  if (got.hidden != expected.hidden) fail("hidden");
  if (got.activation != expected.activation) fail("activation");
  if (got.time_embedding != expected.time_embedding) fail("time_embedding");
  if (got.sin_pairs != expected.sin_pairs) fail("sin_pairs");
  return ckpt;
}

}  // namespace cafm
