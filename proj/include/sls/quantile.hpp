#pragma once

#include <vector>

#include "sls/nn.hpp"

namespace sls {

/// max(beta (g - q), (beta - 1)(g - q)); minimized at the beta-quantile.
double pinball_loss(double beta, double g, double q_hat);

/// Elementwise pinball loss on the tape; g is treated as a constant target.
Var pinball(Tape& tape, double beta, Var g, Var q_hat);

struct QuantileNetConfig {
  int x_dim = 1;
  std::vector<int> hidden_dims{64, 64};
  bool use_layer_norm = true;
  double dropout_rate = 0.1;

  void validate() const;
};

/// Three conditional quantiles of the frontier score: a shared MLP backbone
/// with three linear heads. Outputs pass through exp(.) + 1e-6 (strict
/// positivity) and are sorted per sample so low <= mid <= high always.
class QuantileNet {
 public:
  struct Triple {
    Var low, mid, high;  // each Bx1
  };

  QuantileNet() = default;
  QuantileNet(const QuantileNetConfig& cfg, RngStream& init_rng);

  const QuantileNetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Triple forward(Tape& tape, const std::vector<Var>& bound, Var x, Mode mode,
                 RngStream* dropout_rng) const;

  Tensor eval_mid(const Tensor& x) const;  // Bx1
  Tensor eval_all(const Tensor& x) const;  // Bx3, columns (low, mid, high)

 private:
  QuantileNetConfig cfg_;
  ParamSet params_;
  Mlp backbone_;
  std::vector<int> head_ids_;  // W, b per head, three heads
};

}  // namespace sls
