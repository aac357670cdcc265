#include "sls/frontier.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace sls {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kLogFloor = 1e-12;  // guards log-volume at threshold zero

void check_nonneg(const Tensor& t, const char* what) {
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] < 0.0) throw std::invalid_argument(std::string(what) + ": negative threshold");
}
}  // namespace

ShapeMode FrontierConfig::resolved_shape_mode() const {
  if (shape_mode != ShapeMode::kAuto) return shape_mode;
  return d < 5 ? ShapeMode::kFullRank : ShapeMode::kLowRankDiag;
}

int FrontierConfig::low_rank() const {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
}

void FrontierConfig::validate() const {
  if (x_dim < 1 || d < 1) throw std::invalid_argument("FrontierConfig: dims must be >= 1");
  if (components < 1) throw std::invalid_argument("FrontierConfig: components must be >= 1");
  if (flow_layers < 1) throw std::invalid_argument("FrontierConfig: flow_layers must be >= 1");
  if (flow_dropout < 0.0 || flow_dropout >= 1.0)
    throw std::invalid_argument("FrontierConfig: flow_dropout must be in [0,1)");
}

double unit_ball_volume(int d) {
  return std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

std::pair<std::vector<double>, double> softmin_aggregate(const std::vector<double>& scores,
                                                         double beta) {
  if (scores.empty()) throw std::invalid_argument("softmin_aggregate: empty scores");
  if (beta <= 0.0) throw std::invalid_argument("softmin_aggregate: beta must be positive");
  double mn = scores[0];
  for (double s : scores) mn = std::min(mn, s);
  std::vector<double> w(scores.size());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] = std::exp(-beta * (scores[k] - mn));
    z += w[k];
  }
  double agg = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] /= z;
    agg += w[k] * scores[k];
  }
  return {std::move(w), agg};
}

double low_rank_det(const std::vector<double>& diag, const Tensor& v) {
  int d = static_cast<int>(diag.size());
  if (v.rows() != d) throw std::invalid_argument("low_rank_det: V rows must equal dim of D");
  int r = v.cols();
  Eigen::VectorXd dv(d);
  for (int i = 0; i < d; ++i) {
    if (diag[i] <= 0.0) throw std::invalid_argument("low_rank_det: non-positive diagonal");
    dv(i) = diag[i];
  }
  Eigen::MatrixXd V(d, r);
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < r; ++c) V(i, c) = v(i, c);
  Eigen::MatrixXd M =
      Eigen::MatrixXd::Identity(r, r) + V.transpose() * dv.cwiseInverse().asDiagonal() * V;
  double det = dv.prod() * M.determinant();
  return std::sqrt(det);
}

// --- CouplingStack ---

CouplingStack::CouplingStack(int d, int x_dim, int layers, const std::vector<int>& hidden,
                             bool layer_norm, double dropout, ParamSet& params,
                             RngStream& init_rng)
    : d_(d), x_dim_(x_dim) {
  if (d < 2) throw std::invalid_argument("CouplingStack: needs d >= 2");
  int ka = (d + 1) / 2;  // first block
  int kb = d - ka;
  for (int l = 0; l < layers; ++l) {
    bool even = l % 2 == 0;
    MlpConfig cfg;
    cfg.input_dim = (even ? ka : kb) + x_dim;
    cfg.hidden_dims = hidden;
    cfg.output_dim = even ? kb : ka;
    cfg.use_layer_norm = layer_norm;
    cfg.dropout_rate = dropout;
    cfg.zero_init_last_layer = true;
    nets_.emplace_back(cfg, params, init_rng);
  }
}

Var CouplingStack::layer_forward(Tape& tape, const std::vector<Var>& bound, std::size_t layer,
                                 Var y, Var x, Mode mode, RngStream* rng, bool invert) const {
  int ka = (d_ + 1) / 2;
  int kb = d_ - ka;
  bool even = layer % 2 == 0;
  int keep_start = even ? 0 : ka;
  int keep_len = even ? ka : kb;
  int shift_start = even ? ka : 0;
  int shift_len = even ? kb : ka;

  Var kept = tape.slice_cols(y, keep_start, keep_len);
  Var shifted = tape.slice_cols(y, shift_start, shift_len);
  int rows = tape.val(y).rows();
  Var zeros = tape.input(Tensor(rows, keep_len));
  Var in = tape.concat_cols({kept, x});
  Var in0 = tape.concat_cols({zeros, x});
  // z2 = y2 + F(y1, X) - F(0, X); the origin term acts as a bias correction.
  Var delta = tape.sub(nets_[layer].forward(tape, bound, in, mode, rng),
                       nets_[layer].forward(tape, bound, in0, mode, rng));
  Var out_shift = invert ? tape.sub(shifted, delta) : tape.add(shifted, delta);
  if (even) return tape.concat_cols({kept, out_shift});
  return tape.concat_cols({out_shift, kept});
}

Var CouplingStack::forward(Tape& tape, const std::vector<Var>& bound, Var y, Var x, Mode mode,
                           RngStream* rng) const {
  Var h = y;
  for (std::size_t l = 0; l < nets_.size(); ++l)
    h = layer_forward(tape, bound, l, h, x, mode, rng, false);
  return h;
}

Tensor CouplingStack::forward_eval(const ParamSet& params, const Tensor& y,
                                   const Tensor& x) const {
  Tape tape;
  auto bound = params.bind(tape);
  Var v = forward(tape, bound, tape.input(y), tape.input(x), Mode::kEval, nullptr);
  return tape.val(v);
}

Tensor CouplingStack::inverse(const ParamSet& params, const Tensor& z, const Tensor& x) const {
  Tape tape;
  auto bound = params.bind(tape);
  Var h = tape.input(z);
  Var xv = tape.input(x);
  for (std::size_t l = nets_.size(); l-- > 0;)
    h = layer_forward(tape, bound, l, h, xv, Mode::kEval, nullptr, true);
  return tape.val(h);
}

// --- MahalanobisCore ---

MahalanobisCore::MahalanobisCore(const FrontierConfig& cfg, ParamSet& params,
                                 RngStream& init_rng)
    : d_(cfg.d),
      identity_flow_(cfg.identity_flow || cfg.d < 2),
      unit_det_(cfg.unit_det),
      mode_(cfg.resolved_shape_mode()),
      rank_(cfg.low_rank()) {
  if (!identity_flow_) {
    RngStream flow_rng = init_rng.split("flow");
    flow_ = CouplingStack(cfg.d, cfg.x_dim, cfg.flow_layers, cfg.flow_hidden, cfg.use_layer_norm,
                          cfg.flow_dropout, params, flow_rng);
  }
  MlpConfig ccfg;
  ccfg.input_dim = cfg.x_dim;
  ccfg.hidden_dims = cfg.center_hidden;
  ccfg.output_dim = cfg.d;
  ccfg.use_layer_norm = cfg.use_layer_norm;
  ccfg.zero_init_last_layer = true;
  RngStream center_rng = init_rng.split("center");
  center_ = Mlp(ccfg, params, center_rng);

  MlpConfig scfg;
  scfg.input_dim = cfg.x_dim;
  scfg.hidden_dims = cfg.shape_hidden;
  scfg.output_dim = mode_ == ShapeMode::kFullRank ? cfg.d + cfg.d * (cfg.d - 1) / 2
                                                  : cfg.d + cfg.d * rank_;
  scfg.use_layer_norm = cfg.use_layer_norm;
  scfg.zero_init_last_layer = true;  // L starts as softplus(0) * I
  RngStream shape_rng = init_rng.split("shape");
  shape_net_ = Mlp(scfg, params, shape_rng);
}

MahalanobisCore::Shape MahalanobisCore::shape(Tape& tape, const std::vector<Var>& bound,
                                              Var x) const {
  Shape s;
  Var raw = shape_net_.forward(tape, bound, x, Mode::kEval, nullptr);
  int rows = tape.val(x).rows();
  if (mode_ == ShapeMode::kFullRank) {
    Var diag = tape.softplus(tape.slice_cols(raw, 0, d_));
    Var off;
    if (d_ > 1) off = tape.slice_cols(raw, d_, d_ * (d_ - 1) / 2);
    Var logdet = tape.sum_rows(tape.log(diag));
    if (unit_det_) {
      // L <- L / det(L)^{1/d}; exact and differentiable.
      Var scale = tape.exp(tape.scale(logdet, -1.0 / d_));
      diag = tape.mul_bcast(diag, scale);
      if (off.valid()) off = tape.mul_bcast(off, scale);
      logdet = tape.input(Tensor(rows, 1));
    }
    s.diag = diag;
    s.off = off;
    s.log_det = logdet;
  } else {
    s.ldiag = tape.softplus(tape.slice_cols(raw, 0, d_));
    s.lfac = tape.slice_cols(raw, d_, d_ * rank_);
    s.log_det = tape.lowrank_logdet_sqrt(s.ldiag, s.lfac, d_, rank_);
  }
  return s;
}

MahalanobisCore::Eval MahalanobisCore::score(Tape& tape, const std::vector<Var>& bound, Var x,
                                             Var y, Mode mode, RngStream* rng) const {
  if (tape.val(y).cols() != d_)
    throw std::invalid_argument("MahalanobisCore: response dim mismatch");
  Var z = identity_flow_ ? y : flow_.forward(tape, bound, y, x, mode, rng);
  Var mu = center_.forward(tape, bound, x, Mode::kEval, nullptr);
  Var u = tape.sub(z, mu);
  Shape s = shape(tape, bound, x);
  Var g;
  if (mode_ == ShapeMode::kFullRank) {
    Var lu = d_ > 1 ? tape.tril_matvec(s.diag, s.off, u, d_)
                    : tape.mul(s.diag, u);
    g = tape.sum_rows(tape.square(lu));
  } else {
    Var qd = tape.sum_rows(tape.mul(s.ldiag, tape.square(u)));
    Var qv = tape.sum_rows(tape.square(tape.batched_matvec_t(s.lfac, u, d_, rank_)));
    g = tape.add(qd, qv);
    if (unit_det_) {
      g = tape.mul(g, tape.exp(tape.scale(s.log_det, -2.0 / d_)));
      s.log_det = tape.input(Tensor(tape.val(x).rows(), 1));
    }
  }
  return Eval{g, s.log_det};
}

Var MahalanobisCore::log_det(Tape& tape, const std::vector<Var>& bound, Var x) const {
  Shape s = shape(tape, bound, x);
  if (mode_ == ShapeMode::kLowRankDiag && unit_det_)
    return tape.input(Tensor(tape.val(x).rows(), 1));
  return s.log_det;
}

Tensor MahalanobisCore::eval_scores(const ParamSet& params, const Tensor& x,
                                    const Tensor& y) const {
  Tape tape;
  auto bound = params.bind(tape);
  Eval e = score(tape, bound, tape.input(x), tape.input(y), Mode::kEval, nullptr);
  return tape.val(e.score);
}

std::pair<Tensor, Tensor> MahalanobisCore::shape_entries(const ParamSet& params,
                                                         const Tensor& x) const {
  if (mode_ != ShapeMode::kFullRank)
    throw std::invalid_argument("shape_entries: full-rank mode only");
  Tape tape;
  auto bound = params.bind(tape);
  Shape s = shape(tape, bound, tape.input(x));
  Tensor off = d_ > 1 ? tape.val(s.off) : Tensor(x.rows(), 1);
  return {tape.val(s.diag), off};
}

// --- Frontier base ---

Tensor Frontier::eval_scores(const Tensor& x, const Tensor& y) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Var g = score(tape, bound, tape.input(x), tape.input(y), Mode::kEval, nullptr);
  return tape.val(g);
}

Tensor Frontier::eval_volumes(const Tensor& t, const Tensor& x, bool log_space) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Var v = volume(tape, bound, tape.input(t), tape.input(x), log_space);
  return tape.val(v);
}

// --- NormFrontier ---

NormFrontier::NormFrontier(FrontierConfig cfg, RngStream& init_rng) : Frontier(std::move(cfg)) {
  MlpConfig ccfg;
  ccfg.input_dim = cfg_.x_dim;
  ccfg.hidden_dims = cfg_.center_hidden;
  ccfg.output_dim = cfg_.d;
  ccfg.use_layer_norm = cfg_.use_layer_norm;
  ccfg.zero_init_last_layer = true;
  RngStream center_rng = init_rng.split("center");
  center_ = Mlp(ccfg, params_, center_rng);
}

Var NormFrontier::score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode,
                        RngStream*) const {
  Var mu = center_.forward(tape, bound, x, Mode::kEval, nullptr);
  Var u = tape.sub(y, mu);
  if (cfg_.d == 1) return tape.abs(u);
  return tape.sqrt(tape.sum_rows(tape.square(u)));
}

Var NormFrontier::volume(Tape& tape, const std::vector<Var>&, Var t, Var, bool log_space) const {
  check_nonneg(tape.val(t), "NormFrontier::volume");
  if (cfg_.d == 1) {
    Var v = tape.scale(t, 2.0);
    return log_space ? tape.log(tape.add_const(v, kLogFloor)) : v;
  }
  double vd = unit_ball_volume(cfg_.d);
  if (log_space)
    return tape.add_const(tape.scale(tape.log(tape.add_const(t, kLogFloor)),
                                     static_cast<double>(cfg_.d)),
                          std::log(vd));
  return tape.scale(tape.pow_const(t, static_cast<double>(cfg_.d)), vd);
}

Tensor NormFrontier::eval_center(const Tensor& x) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Var mu = center_.forward(tape, bound, tape.input(x), Mode::kEval, nullptr);
  return tape.val(mu);
}

// --- FlowMahalanobis ---

FlowMahalanobis::FlowMahalanobis(FrontierConfig cfg, RngStream& init_rng)
    : Frontier(std::move(cfg)) {
  RngStream core_rng = init_rng.split("core");
  core_ = MahalanobisCore(cfg_, params_, core_rng);
}

Var FlowMahalanobis::score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
                           RngStream* rng) const {
  return core_.score(tape, bound, x, y, mode, rng).score;
}

MahalanobisCore::Eval FlowMahalanobis::score_with_logdet(Tape& tape,
                                                         const std::vector<Var>& bound, Var x,
                                                         Var y, Mode mode,
                                                         RngStream* rng) const {
  return core_.score(tape, bound, x, y, mode, rng);
}

Var FlowMahalanobis::volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
                            bool log_space) const {
  check_nonneg(tape.val(t), "FlowMahalanobis::volume");
  Var logdet = core_.log_det(tape, bound, x);
  double vd = unit_ball_volume(cfg_.d);
  double half_d = 0.5 * cfg_.d;
  if (log_space) {
    Var lt = tape.scale(tape.log(tape.add_const(t, kLogFloor)), half_d);
    return tape.add_const(tape.sub(lt, logdet), std::log(vd));
  }
  Var v = tape.scale(tape.pow_const(t, half_d), vd);
  return tape.mul(v, tape.exp(tape.scale(logdet, -1.0)));
}

// --- UnionOfFlows ---

UnionOfFlows::UnionOfFlows(FrontierConfig cfg, RngStream& init_rng) : Frontier(std::move(cfg)) {
  FrontierConfig comp_cfg = cfg_;
  comp_cfg.unit_det = true;  // per-component unit determinant
  cfg_.unit_det = true;
  for (int k = 0; k < cfg_.components; ++k) {
    RngStream core_rng = init_rng.split("core" + std::to_string(k));
    cores_.emplace_back(comp_cfg, params_, core_rng);
  }
  MlpConfig mcfg;
  mcfg.input_dim = cfg_.x_dim;
  mcfg.hidden_dims = cfg_.mixture_hidden;
  mcfg.output_dim = cfg_.components;
  mcfg.use_layer_norm = cfg_.use_layer_norm;
  mcfg.zero_init_last_layer = true;  // uniform weights at init
  RngStream mix_rng = init_rng.split("mixture");
  int before = params_.count();
  mixture_ = Mlp(mcfg, params_, mix_rng);
  for (int i = before; i < params_.count(); ++i) mixture_ids_.push_back(i);
}

Var UnionOfFlows::mixture_weights(Tape& tape, const std::vector<Var>& bound, Var x) const {
  if (frozen_)
    return tape.input(
        Tensor::full(tape.val(x).rows(), cfg_.components, 1.0 / cfg_.components));
  return tape.softmax_rows(mixture_.forward(tape, bound, x, Mode::kEval, nullptr));
}

Var UnionOfFlows::component_scores(Tape& tape, const std::vector<Var>& bound, Var x, Var y,
                                   Mode mode, RngStream* rng) const {
  std::vector<Var> gs;
  gs.reserve(cores_.size());
  for (const auto& core : cores_) gs.push_back(core.score(tape, bound, x, y, mode, rng).score);
  Var all = tape.concat_cols(gs);
  Var p = mixture_weights(tape, bound, x);
  // Latent distance scaled by p_k^{-2/d} so component volumes track p_k.
  return tape.mul(all, tape.pow_const(p, -2.0 / cfg_.d));
}

Var UnionOfFlows::score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
                        RngStream* rng) const {
  Var scores = component_scores(tape, bound, x, y, mode, rng);
  if (cfg_.components == 1) return scores;
  Var w = tape.softmax_rows(tape.scale(scores, -beta_));
  return tape.sum_rows(tape.mul(w, scores));
}

Var UnionOfFlows::volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
                         bool log_space) const {
  check_nonneg(tape.val(t), "UnionOfFlows::volume");
  double vd = unit_ball_volume(cfg_.d);
  Var vt = tape.scale(tape.pow_const(t, 0.5 * cfg_.d), vd);
  Var p = mixture_weights(tape, bound, x);
  // Sum of component ellipsoid volumes; exact when components are disjoint.
  Var v = tape.sum_rows(tape.mul_bcast(p, vt));
  return log_space ? tape.log(tape.add_const(v, kLogFloor)) : v;
}

Tensor UnionOfFlows::eval_mixture_weights(const Tensor& x) const {
  Tape tape;
  auto bound = params_.bind(tape);
  return tape.val(mixture_weights(tape, bound, tape.input(x)));
}

Tensor UnionOfFlows::eval_scores(const Tensor& x, const Tensor& y) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Var scores =
      component_scores(tape, bound, tape.input(x), tape.input(y), Mode::kEval, nullptr);
  const Tensor& s = tape.val(scores);
  Tensor out(s.rows(), 1);
  for (int i = 0; i < s.rows(); ++i) {
    double mn = s(i, 0);
    for (int j = 1; j < s.cols(); ++j) mn = std::min(mn, s(i, j));
    out(i, 0) = mn;
  }
  return out;
}

std::unique_ptr<Frontier> make_frontier(const FrontierConfig& cfg, RngStream& init_rng) {
  cfg.validate();
  switch (cfg.family) {
    case Family::kNorm:
      return std::make_unique<NormFrontier>(cfg, init_rng);
    case Family::kFlowMahalanobis:
      return std::make_unique<FlowMahalanobis>(cfg, init_rng);
    case Family::kUnionOfFlows:
      return std::make_unique<UnionOfFlows>(cfg, init_rng);
  }
  throw std::invalid_argument("make_frontier: unknown family");
}

}  // namespace sls
