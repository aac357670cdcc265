#include "sls/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sls {

void TrainConfig::validate() const {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("TrainConfig: tau in (0,1)");
  if (total_steps < 2) throw std::invalid_argument("TrainConfig: total_steps too small");
  if (warmup >= total_steps)
    throw std::invalid_argument("TrainConfig: warmup must be below total_steps");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (val_frac <= 0.0 || val_frac >= 1.0)
    throw std::invalid_argument("TrainConfig: val_frac in (0,1)");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
  if (beta_init <= 0.0 || beta_max < beta_init)
    throw std::invalid_argument("TrainConfig: need 0 < beta_init <= beta_max");
  if (freeze_frac < 0.0 || freeze_frac > 1.0)
    throw std::invalid_argument("TrainConfig: freeze_frac in [0,1]");
}

Objective TrainConfig::resolved_objective(int d) const {
  if (objective != Objective::kAuto) return objective;
  return d >= 5 ? Objective::kLogVolume : Objective::kVolume;
}

long TrainConfig::resolved_warmup() const {
  return warmup >= 0 ? warmup : static_cast<long>(0.3 * total_steps);
}

Tensor frozen_scores(const Frontier& frontier, const Tensor& x, const Tensor& y) {
  Tape tape;
  auto bound = frontier.params().bind(tape);
  Var g = frontier.score(tape, bound, tape.input(x), tape.input(y), Mode::kEval, nullptr);
  return tape.val(g);
}

SurrogateBatch surrogate_loss(Tape& tape, const Frontier& frontier,
                              const std::vector<Var>& bound, const Tensor& x, const Tensor& y,
                              bool warm, const Tensor& q_low, const Tensor& q_high,
                              Objective objective, RngStream* dropout_rng) {
  SurrogateBatch out;
  out.batch = x.rows();
  Var xv = tape.input(x);
  Var g = frontier.score(tape, bound, xv, tape.input(y), Mode::kTrain, dropout_rng);
  Var h;
  switch (objective) {
    case Objective::kVolume:
      h = frontier.volume(tape, bound, g, xv, false);
      break;
    case Objective::kLogVolume:
      h = frontier.volume(tape, bound, g, xv, true);
      break;
    case Objective::kThreshold:
      h = g;
      break;
    case Objective::kAuto:
      throw std::logic_error("surrogate_loss: objective must be resolved");
  }
  if (warm) {
    out.loss = tape.mean(h);
    out.in_window = out.batch;
    return out;
  }
  const Tensor& gv = tape.val(g);
  Tensor mask(gv.rows(), 1);
  int count = 0;
  for (int i = 0; i < gv.rows(); ++i) {
    bool in = gv(i, 0) >= q_low(i, 0) && gv(i, 0) <= q_high(i, 0);
    mask(i, 0) = in ? 1.0 : 0.0;
    count += in ? 1 : 0;
  }
  out.in_window = count;
  if (count == 0) return out;  // loss stays invalid; caller skips the step
  out.loss = tape.scale(tape.sum(tape.mul(tape.input(mask), h)), 1.0 / count);
  return out;
}

namespace {

struct Snapshot {
  std::vector<Tensor> frontier_vals, qnet_vals;
  double beta = 0.0;
  bool frozen = false;
  long step = 0;
};

Snapshot snapshot(const Frontier& f, const QuantileNet& q) {
  return {f.params().values(), q.params().values(), f.softmin_beta(), f.weights_frozen(), 0};
}

void restore(Frontier& f, QuantileNet& q, const Snapshot& s) {
  f.params().values() = s.frontier_vals;
  q.params().values() = s.qnet_vals;
  f.set_softmin_beta(s.beta);
  f.set_weights_frozen(s.frozen);
}

struct ValStats {
  double coverage = 0.0;        // at r = 1
  double adjusted_volume = 0.0; // at the exact-coverage scale
  double scale = 1.0;
};

ValStats validate_now(const Frontier& frontier, const QuantileNet& qnet, const Dataset& val,
                      double tau) {
  Tensor g = frontier.eval_scores(val.x, val.y);
  Tensor q = qnet.eval_mid(val.x);
  std::vector<double> s(g.rows());
  int hits = 0;
  for (int i = 0; i < g.rows(); ++i) {
    s[i] = g(i, 0) / q(i, 0);
    hits += g(i, 0) <= q(i, 0) ? 1 : 0;
  }
  ValStats st;
  st.coverage = static_cast<double>(hits) / g.rows();
  CalibrationResult cal = calibrate_scores(s, tau);
  st.scale = cal.scale;
  if (std::isinf(cal.scale)) {
    st.adjusted_volume = std::numeric_limits<double>::infinity();
    return st;
  }
  Tensor t(q.rows(), 1);
  for (int i = 0; i < q.rows(); ++i) t(i, 0) = cal.scale * q(i, 0);
  Tensor vols = frontier.eval_volumes(t, val.x, false);
  double sum = 0.0;
  for (int i = 0; i < vols.rows(); ++i) sum += vols(i, 0);
  st.adjusted_volume = sum / vols.rows();
  return st;
}

Dataset sample_batch(const Dataset& data, int batch, RngStream& rng) {
  std::vector<int> idx(batch);
  for (int i = 0; i < batch; ++i) idx[i] = static_cast<int>(rng.index(data.n()));
  return take_rows(data, idx);
}

void omega_step(QuantileNet& qnet, Adam& adam, const Dataset& batch, const Tensor& g,
                double lo_level, double mid_level, double hi_level, RngStream* drop_rng) {
  Tape tape;
  auto bound = qnet.params().bind(tape);
  auto triple = qnet.forward(tape, bound, tape.input(batch.x), Mode::kTrain, drop_rng);
  Var gt = tape.input(g);
  Var loss = tape.add(tape.add(tape.mean(pinball(tape, lo_level, gt, triple.low)),
                               tape.mean(pinball(tape, mid_level, gt, triple.mid))),
                      tape.mean(pinball(tape, hi_level, gt, triple.high)));
  tape.backward(loss);
  adam.step(qnet.params(), qnet.params().collect_grads(tape, bound));
}

}  // namespace

TrainResult train(const Dataset& data, const FrontierConfig& fcfg, const TrainConfig& cfg) {
  cfg.validate();
  fcfg.validate();
  if (data.x.cols() != fcfg.x_dim || data.y.cols() != fcfg.d)
    throw std::invalid_argument("train: data dims do not match the frontier config");

  RngStream master(cfg.seed, "train");
  RngStream split_rng = master.split("split");
  auto [tr, val] = split_dataset(data, 1.0 - cfg.val_frac, split_rng);

  RngStream finit = master.split("init/frontier");
  std::unique_ptr<Frontier> frontier = make_frontier(fcfg, finit);
  QuantileNetConfig qcfg;
  qcfg.x_dim = fcfg.x_dim;
  qcfg.hidden_dims = cfg.qnet_hidden;
  qcfg.use_layer_norm = cfg.qnet_layer_norm;
  qcfg.dropout_rate = cfg.qnet_dropout;
  RngStream qinit = master.split("init/qnet");
  QuantileNet qnet(qcfg, qinit);

  long n0 = cfg.resolved_warmup();
  long T = cfg.total_steps;
  WindowSchedule sched =
      cfg.schedule ? *cfg.schedule : WindowSchedule::defaults(cfg.tau, T, n0);
  Objective obj = cfg.resolved_objective(fcfg.d);

  bool is_union = fcfg.family == Family::kUnionOfFlows && fcfg.components > 1;
  long unfreeze_at = n0 + static_cast<long>(cfg.freeze_frac * (T - n0));
  frontier->set_softmin_beta(cfg.beta_init);
  frontier->set_weights_frozen(is_union);

  Adam adam_theta(cfg.theta_adam);
  Adam adam_omega(cfg.omega_adam);
  RngStream batch_rng = master.split("batch");
  RngStream theta_drop = master.split("dropout/theta");
  RngStream omega_drop = master.split("dropout/omega");

  TrainResult res;
  Snapshot best = snapshot(*frontier, qnet);
  double best_vol = std::numeric_limits<double>::infinity();
  long best_step = 0;

  try {
    for (long j = 1; j <= T; ++j) {
      bool warm = j <= n0;
      auto [phi, psi] = sched.bounds(j, cfg.tau);
      if (is_union) {
        if (j >= unfreeze_at && frontier->weights_frozen())
          frontier->set_weights_frozen(false);
        if (j >= unfreeze_at && T > unfreeze_at) {
          double frac = static_cast<double>(j - unfreeze_at) / (T - unfreeze_at);
          frontier->set_softmin_beta(cfg.beta_init *
                                     std::pow(cfg.beta_max / cfg.beta_init, frac));
        }
      }

      Dataset batch = sample_batch(tr, cfg.batch_size, batch_rng);

      Tensor q_low, q_high;
      if (!warm) {
        Tensor qs = qnet.eval_all(batch.x);
        q_low = Tensor(qs.rows(), 1);
        q_high = Tensor(qs.rows(), 1);
        for (int i = 0; i < qs.rows(); ++i) {
          q_low(i, 0) = qs(i, 0);
          q_high(i, 0) = qs(i, 2);
        }
      }

      double theta_loss = std::numeric_limits<double>::quiet_NaN();
      int in_window = 0;
      {
        Tape tape;
        auto bound = frontier->params().bind(tape);
        SurrogateBatch sb = surrogate_loss(tape, *frontier, bound, batch.x, batch.y, warm,
                                           q_low, q_high, obj, &theta_drop);
        in_window = sb.in_window;
        if (sb.loss.valid()) {
          theta_loss = tape.val(sb.loss).item();
          if (!std::isfinite(theta_loss))
            throw TrainingDiverged("train: non-finite frontier loss at step " +
                                   std::to_string(j));
          tape.backward(sb.loss);
          std::vector<int> frozen =
              frontier->weights_frozen() ? frontier->mixture_param_ids() : std::vector<int>{};
          adam_theta.step(frontier->params(),
                          frontier->params().collect_grads(tape, bound), frozen);
        } else {
          ++res.empty_window_skips;
        }
      }

      Tensor g = frozen_scores(*frontier, batch.x, batch.y);
      if (!g.all_finite())
        throw TrainingDiverged("train: non-finite scores at step " + std::to_string(j));
      omega_step(qnet, adam_omega, batch, g, cfg.tau - phi, cfg.tau, cfg.tau + psi,
                 &omega_drop);

      if (j % cfg.eval_every == 0 || j == T) {
        ValStats st = validate_now(*frontier, qnet, val, cfg.tau);
        TrainLogEntry e;
        e.step = j;
        e.theta_loss = theta_loss;
        e.in_window_frac = static_cast<double>(in_window) / cfg.batch_size;
        e.phi = phi;
        e.psi = psi;
        e.beta = frontier->softmin_beta();
        e.val_coverage = st.coverage;
        e.val_adjusted_volume = st.adjusted_volume;
        if (st.adjusted_volume < best_vol) {
          best_vol = st.adjusted_volume;
          best = snapshot(*frontier, qnet);
          best_step = j;
          e.checkpointed = true;
        }
        res.log.push_back(e);
      }
    }
  } catch (const TrainingDiverged&) {
    res.diverged = true;
  }

  restore(*frontier, qnet, best);

  // Post-hoc sharpening of the target quantile with the frontier frozen.
  if (cfg.finetune_steps > 0 && !res.diverged) {
    Snapshot pre = snapshot(*frontier, qnet);
    auto [phi_end, psi_end] = sched.bounds(T, cfg.tau);
    Adam adam_ft(cfg.omega_adam);
    RngStream ft_batch = master.split("batch/finetune");
    RngStream ft_drop = master.split("dropout/finetune");
    for (long j = 0; j < cfg.finetune_steps; ++j) {
      Dataset batch = sample_batch(tr, cfg.batch_size, ft_batch);
      Tensor g = frozen_scores(*frontier, batch.x, batch.y);
      omega_step(qnet, adam_ft, batch, g, cfg.tau - phi_end, cfg.tau, cfg.tau + psi_end,
                 &ft_drop);
    }
    double pre_vol = best_vol;
    ValStats st = validate_now(*frontier, qnet, val, cfg.tau);
    if (!(st.adjusted_volume <= pre_vol)) {
      // fine-tuning did not help on validation; keep the checkpointed net
      qnet.params().values() = pre.qnet_vals;
    } else {
      best_vol = st.adjusted_volume;
    }
  }

  res.best_step = best_step;
  res.best_val_adjusted_volume = best_vol;
  res.region = std::make_unique<PredictionRegion>(std::move(frontier), std::move(qnet),
                                                  cfg.tau);
  return res;
}

BaselineResult gaussian_nll_baseline(const Dataset& data, int x_dim, int d,
                                     const TrainConfig& cfg) {
  cfg.validate();
  FrontierConfig fcfg;
  fcfg.family = Family::kFlowMahalanobis;
  fcfg.x_dim = x_dim;
  fcfg.d = d;
  fcfg.identity_flow = true;
  fcfg.unit_det = false;

  RngStream master(cfg.seed, "nll-baseline");
  RngStream split_rng = master.split("split");
  auto [tr, val] = split_dataset(data, 1.0 - cfg.val_frac, split_rng);
  RngStream finit = master.split("init/frontier");
  auto frontier = std::make_unique<FlowMahalanobis>(fcfg, finit);

  Adam adam(cfg.theta_adam);
  RngStream batch_rng = master.split("batch");
  for (long j = 1; j <= cfg.total_steps; ++j) {
    Dataset batch = sample_batch(tr, cfg.batch_size, batch_rng);
    Tape tape;
    auto bound = frontier->params().bind(tape);
    auto e = frontier->score_with_logdet(tape, bound, tape.input(batch.x),
                                         tape.input(batch.y), Mode::kTrain, nullptr);
    Var loss = tape.sub(tape.mean(e.score), tape.mean(e.log_det));
    if (!std::isfinite(tape.val(loss).item()))
      throw TrainingDiverged("nll baseline: non-finite loss at step " + std::to_string(j));
    tape.backward(loss);
    adam.step(frontier->params(), frontier->params().collect_grads(tape, bound));
  }

  auto region = std::make_unique<PredictionRegion>(std::move(frontier), std::nullopt, cfg.tau);
  CalibrationResult cal = calibrate(*region, val.x, val.y, cfg.tau);
  region->set_scale(cal.scale);
  BaselineResult out;
  out.region = std::move(region);
  out.calibration = cal;
  return out;
}

}  // namespace sls
