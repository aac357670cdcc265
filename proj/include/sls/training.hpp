#pragma once

#include <optional>
#include <vector>

#include "sls/conformal.hpp"
#include "sls/dataset.hpp"
#include "sls/frontier.hpp"
#include "sls/quantile.hpp"
#include "sls/region.hpp"
#include "sls/schedule.hpp"

namespace sls {

enum class Objective {
  kAuto,       // Volume below d = 5, LogVolume from there up
  kVolume,     // h(t, X) = Vol(t, X)
  kLogVolume,  // h(t, X) = log Vol(t, X)
  kThreshold,  // h(t, X) = t (e.g. median-absolute-deviation objective)
};

struct TrainConfig {
  double tau = 0.9;
  long total_steps = 20000;
  long warmup = -1;  // -1: 30% of total_steps
  int batch_size = 256;
  AdamConfig theta_adam;
  AdamConfig omega_adam;
  Objective objective = Objective::kAuto;
  std::optional<WindowSchedule> schedule;  // defaults derived from tau/steps

  // quantile net
  std::vector<int> qnet_hidden{64, 64};
  bool qnet_layer_norm = true;
  double qnet_dropout = 0.1;
  long finetune_steps = 1000;  // post-hoc quantile-only pass, frontier frozen

  // union-of-flows options
  double beta_init = 1.0;
  double beta_max = 1e3;
  double freeze_frac = 0.25;  // of post-warm-up steps with p_k fixed at 1/K

  long eval_every = 200;
  double val_frac = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  Objective resolved_objective(int d) const;
  long resolved_warmup() const;
};

struct TrainLogEntry {
  long step = 0;
  double theta_loss = 0.0;
  double in_window_frac = 0.0;
  double phi = 0.0, psi = 0.0, beta = 0.0;
  double val_coverage = 0.0;
  double val_adjusted_volume = 0.0;  // mean volume after scaling to tau coverage
  bool checkpointed = false;
};

struct TrainResult {
  std::unique_ptr<PredictionRegion> region;
  std::vector<TrainLogEntry> log;
  long empty_window_skips = 0;
  long best_step = 0;
  double best_val_adjusted_volume = 0.0;
  bool diverged = false;
};

/// Eval-mode frontier scores via the training-time aggregate (softmin at the
/// current temperature for unions); pinball targets use these.
Tensor frozen_scores(const Frontier& frontier, const Tensor& x, const Tensor& y);

/// Windowed (or warm-up) objective for one batch. Returns the loss root on
/// the tape, or an invalid Var when no sample falls inside the window.
struct SurrogateBatch {
  Var loss;
  int in_window = 0;
  int batch = 0;
};
SurrogateBatch surrogate_loss(Tape& tape, const Frontier& frontier,
                              const std::vector<Var>& bound, const Tensor& x, const Tensor& y,
                              bool warm, const Tensor& q_low, const Tensor& q_high,
                              Objective objective, RngStream* dropout_rng);

/// Alternating optimization of frontier and quantile net: warm-up, shrinking
/// quantile window, checkpoint selection by validation adjusted volume, then
/// a quantile-only fine-tuning pass.
TrainResult train(const Dataset& data, const FrontierConfig& fcfg, const TrainConfig& cfg);

/// Maximum-likelihood Gaussian ellipsoid baseline: identity flow, loss
/// E[-log det L + ||L (y - mu)||^2], threshold calibrated on the validation
/// split to tau. No quantile net.
struct BaselineResult {
  std::unique_ptr<PredictionRegion> region;
  CalibrationResult calibration;
};
BaselineResult gaussian_nll_baseline(const Dataset& data, int x_dim, int d,
                                     const TrainConfig& cfg);

}  // namespace sls
