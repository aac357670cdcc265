#include "sls/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sls {

void MlpConfig::validate() const {
  if (input_dim < 1 || output_dim < 1)
    throw std::invalid_argument("MlpConfig: dims must be >= 1");
  for (int h : hidden_dims)
    if (h < 1) throw std::invalid_argument("MlpConfig: hidden dims must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("MlpConfig: dropout_rate must be in [0,1)");
}

Tensor glorot_uniform(int fan_in, int fan_out, RngStream& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-bound, bound);
  return w;
}

Mlp::Mlp(const MlpConfig& cfg, ParamSet& params, RngStream& init_rng) : cfg_(cfg) {
  cfg_.validate();
  int in = cfg_.input_dim;
  for (std::size_t l = 0; l < cfg_.hidden_dims.size(); ++l) {
    int out = cfg_.hidden_dims[l];
    ids_.push_back(params.add(glorot_uniform(in, out, init_rng)));
    ids_.push_back(params.add(Tensor(1, out)));  // bias, zero
    if (cfg_.use_layer_norm) {
      ids_.push_back(params.add(Tensor::full(1, out, 1.0)));  // gain
      ids_.push_back(params.add(Tensor(1, out)));             // shift
    }
    in = out;
  }
  if (cfg_.zero_init_last_layer) {
    ids_.push_back(params.add(Tensor(in, cfg_.output_dim)));
  } else {
    ids_.push_back(params.add(glorot_uniform(in, cfg_.output_dim, init_rng)));
  }
  ids_.push_back(params.add(Tensor(1, cfg_.output_dim)));
}

Var Mlp::forward(Tape& tape, const std::vector<Var>& bound, Var x, Mode mode,
                 RngStream* dropout_rng) const {
  if (tape.val(x).cols() != cfg_.input_dim)
    throw std::invalid_argument("Mlp::forward: input dim " +
                                std::to_string(tape.val(x).cols()) + " != " +
                                std::to_string(cfg_.input_dim));
  std::size_t p = 0;
  Var h = x;
  for (std::size_t l = 0; l < cfg_.hidden_dims.size(); ++l) {
    Var w = bound[ids_[p++]];
    Var b = bound[ids_[p++]];
    h = tape.add_bias(tape.matmul(h, w), b);
    if (cfg_.use_layer_norm) {
      Var gain = bound[ids_[p++]];
      Var shift = bound[ids_[p++]];
      h = tape.add_bias(tape.mul_rowvec(tape.layer_norm(h), gain), shift);
    }
    h = tape.relu(h);
    if (cfg_.dropout_rate > 0.0) h = tape.dropout(h, cfg_.dropout_rate, mode, dropout_rng);
  }
  Var w = bound[ids_[p++]];
  Var b = bound[ids_[p++]];
  return tape.add_bias(tape.matmul(h, w), b);
}

void Adam::step(ParamSet& params, const std::vector<Tensor>& grads,
                const std::vector<int>& frozen_ids) {
  if (static_cast<int>(grads.size()) != params.count())
    throw std::invalid_argument("Adam::step: gradient count mismatch");
  if (m_.empty()) {
    for (int i = 0; i < params.count(); ++i) {
      m_.emplace_back(params.value(i).rows(), params.value(i).cols());
      v_.emplace_back(params.value(i).rows(), params.value(i).cols());
    }
  }
  for (int i = 0; i < params.count(); ++i)
    if (!grads[i].all_finite())
      throw TrainingDiverged("Adam::step: non-finite gradient for parameter " +
                             std::to_string(i));
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (int i = 0; i < params.count(); ++i) {
    if (std::find(frozen_ids.begin(), frozen_ids.end(), i) != frozen_ids.end()) continue;
    Tensor& p = params.value(i);
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace sls
