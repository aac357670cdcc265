#pragma once

#include <string>
#include <vector>

#include "sls/tape.hpp"

namespace sls {

/// Flat registry of trainable tensors. Modules add parameters at
/// construction; training binds the whole set to a tape each step and
/// collects gradients by parameter id.
class ParamSet {
 public:
  int add(Tensor t) {
    values_.push_back(std::move(t));
    return static_cast<int>(values_.size()) - 1;
  }

  int count() const { return static_cast<int>(values_.size()); }
  Tensor& value(int id) { return values_[id]; }
  const Tensor& value(int id) const { return values_[id]; }

  std::vector<Var> bind(Tape& tape) const {
    std::vector<Var> vars;
    vars.reserve(values_.size());
    for (int i = 0; i < count(); ++i) vars.push_back(tape.param(values_[i], i));
    return vars;
  }

  /// Gradients aligned with parameter ids (zeros where unreached).
  std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<Var>& bound) const {
    std::vector<Tensor> g;
    g.reserve(bound.size());
    for (Var v : bound) g.push_back(tape.grad(v));
    return g;
  }

  const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor>& values() { return values_; }

 private:
  std::vector<Tensor> values_;
};

enum class Activation { kRelu };

struct MlpConfig {
  int input_dim = 1;
  std::vector<int> hidden_dims;
  int output_dim = 1;
  bool use_layer_norm = true;
  double dropout_rate = 0.0;  // must be < 1
  Activation activation = Activation::kRelu;
  bool zero_init_last_layer = false;

  void validate() const;
};

/// MLP whose parameters live in an external ParamSet. Layout per layer:
/// W, b, then (hidden layers with layer norm) gain, bias.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpConfig& cfg, ParamSet& params, RngStream& init_rng);

  const MlpConfig& config() const { return cfg_; }
  const std::vector<int>& param_ids() const { return ids_; }

  Var forward(Tape& tape, const std::vector<Var>& bound, Var x, Mode mode,
              RngStream* dropout_rng) const;

 private:
  MlpConfig cfg_;
  std::vector<int> ids_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Thrown when a training step observes non-finite losses or gradients.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  /// One bias-corrected update. frozen_ids, when non-empty, marks parameters
  /// left untouched this step (their moments do not advance either).
  void step(ParamSet& params, const std::vector<Tensor>& grads,
            const std::vector<int>& frozen_ids = {});

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long step_ = 0;
};

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(int fan_in, int fan_out, RngStream& rng);

}  // namespace sls
