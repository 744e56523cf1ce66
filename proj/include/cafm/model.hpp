#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cafm/autodiff.hpp"
#include "cafm/tensor.hpp"

namespace cafm {

enum class Activation { Tanh, Relu };
enum class TimeEmbedding { RawScalar, Sinusoidal };

// Velocity-field MLP: input concat(x, embed(t)), hidden layers with a fixed
// activation, linear output of dimension input_dim.
struct MlpConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden = {128, 128, 128};
  Activation activation = Activation::Tanh;
  TimeEmbedding time_embedding = TimeEmbedding::Sinusoidal;
  std::size_t sin_pairs = 8;  // sinusoidal embedding: (sin, cos) of 2^j*pi*t

  std::size_t embed_dim() const;
  void validate() const;
  bool operator==(const MlpConfig&) const = default;
};

std::string to_text(const MlpConfig& cfg);
MlpConfig mlp_config_from_text(const std::string& text);

// Ordered, named parameter collection. Order is the serialization order.
class ParamSet {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t total_size() const;

  std::vector<double> flatten() const;
  void assign_flat(const std::vector<double>& flat);  // total size must match

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Xavier-uniform weights, zero biases; deterministic in (config, seed).
ParamSet init_mlp_params(const MlpConfig& cfg, std::uint64_t seed);

// Tape leaves for one optimization step, in ParamSet order.
struct ParamVars {
  std::vector<std::pair<std::string, ad::Var>> entries;
  const ad::Var& at(const std::string& name) const;
  bool has(const std::string& name) const;
};
ParamVars make_param_vars(ad::Tape& tape, const ParamSet& params);

// u_theta(x, t). x is [B, input_dim]; t is [B] (one time per row, entries in
// [0,1]) or a single double shared by the batch. The Var overload is fully
// differentiable w.r.t. x, t and every parameter.
Tensor velocity_eval(const MlpConfig& cfg, const ParamSet& params, const Tensor& x,
                     const Tensor& t);
Tensor velocity_eval(const MlpConfig& cfg, const ParamSet& params, const Tensor& x, double t);
ad::Var velocity_var(ad::Tape& tape, const MlpConfig& cfg, const ParamVars& params,
                     const ad::Var& x, const ad::Var& t);

// Differentiable time embedding [B] -> [B, embed_dim], registered as a single
// custom tape node.
Tensor time_embed_eval(const MlpConfig& cfg, const Tensor& t);
ad::Var time_embed_var(ad::Tape& tape, const MlpConfig& cfg, const ad::Var& t);

// Binary checkpoint: magic "CAFM", version, config text + parameter layout,
// raw little-endian doubles. Loading gives back bit-identical parameters.
struct Checkpoint {
  MlpConfig config;
  ParamSet params;
};
void save_checkpoint(const std::string& path, const MlpConfig& cfg, const ParamSet& params);
Checkpoint load_checkpoint(const std::string& path);
// Throws "config mismatch" naming the differing field if the stored model
// does not match `expected`.
Checkpoint load_checkpoint(const std::string& path, const MlpConfig& expected);

}  // namespace cafm
