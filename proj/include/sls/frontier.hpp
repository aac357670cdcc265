#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "sls/nn.hpp"

namespace sls {

enum class Family { kNorm, kFlowMahalanobis, kUnionOfFlows };
enum class ShapeMode { kAuto, kFullRank, kLowRankDiag };

struct FrontierConfig {
  Family family = Family::kFlowMahalanobis;
  int x_dim = 1;
  int d = 2;
  int components = 1;  // K (unions only)
  bool identity_flow = false;
  bool unit_det = false;  // forced on for union components
  int flow_layers = 3;
  std::vector<int> flow_hidden{64, 64};
  std::vector<int> center_hidden{64, 64};
  std::vector<int> shape_hidden{64, 64};
  std::vector<int> mixture_hidden{64, 64};
  bool use_layer_norm = true;
  double flow_dropout = 0.1;
  ShapeMode shape_mode = ShapeMode::kAuto;

  ShapeMode resolved_shape_mode() const;
  int low_rank() const;  // ceil(sqrt(d))
  void validate() const;
};

/// Volume of the Euclidean unit ball in dimension d.
double unit_ball_volume(int d);

/// Softmin weights and aggregate over component scores; stable for large
/// beta (the minimum is subtracted inside the exponentials).
std::pair<std::vector<double>, double> softmin_aggregate(const std::vector<double>& scores,
                                                         double beta);

/// sqrt(det(D + V V^T)) via the matrix determinant lemma. D strictly positive.
double low_rank_det(const std::vector<double>& diag, const Tensor& v);

/// Stack of conditional additive coupling layers; Jacobian determinant is
/// exactly 1, the masking split alternates per layer.
class CouplingStack {
 public:
  CouplingStack() = default;
  CouplingStack(int d, int x_dim, int layers, const std::vector<int>& hidden, bool layer_norm,
                double dropout, ParamSet& params, RngStream& init_rng);

  bool empty() const { return nets_.empty(); }
  Var forward(Tape& tape, const std::vector<Var>& bound, Var y, Var x, Mode mode,
              RngStream* rng) const;
  /// Exact inverse (frozen parameters, eval mode).
  Tensor inverse(const ParamSet& params, const Tensor& z, const Tensor& x) const;
  /// Plain forward on frozen parameters.
  Tensor forward_eval(const ParamSet& params, const Tensor& y, const Tensor& x) const;

 private:
  Var layer_forward(Tape& tape, const std::vector<Var>& bound, std::size_t layer, Var y, Var x,
                    Mode mode, RngStream* rng, bool invert) const;

  int d_ = 0;
  int x_dim_ = 0;
  std::vector<Mlp> nets_;  // layer l shifts the (l odd ? first : second) block
};

/// Parameterized frontier G(X, Y) with a closed-form sub-level-set volume.
class Frontier {
 public:
  explicit Frontier(FrontierConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Frontier() = default;

  const FrontierConfig& config() const { return cfg_; }
  Family family() const { return cfg_.family; }
  int d() const { return cfg_.d; }
  int x_dim() const { return cfg_.x_dim; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Training score, Bx1; differentiable w.r.t. parameters. Unions use the
  /// softmin aggregate at the current inverse temperature.
  virtual Var score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
                    RngStream* rng) const = 0;

  /// Closed-form volume of {y : G(X,y) <= t}; t is Bx1, result Bx1.
  virtual Var volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
                     bool log_space) const = 0;

  /// Frozen-model scores (eval mode; hard min for unions).
  virtual Tensor eval_scores(const Tensor& x, const Tensor& y) const;
  Tensor eval_volumes(const Tensor& t, const Tensor& x, bool log_space = false) const;

  virtual std::vector<int> mixture_param_ids() const { return {}; }
  virtual void set_softmin_beta(double) {}
  virtual double softmin_beta() const { return 0.0; }
  virtual void set_weights_frozen(bool) {}
  virtual bool weights_frozen() const { return false; }

 protected:
  FrontierConfig cfg_;
  ParamSet params_;
};

std::unique_ptr<Frontier> make_frontier(const FrontierConfig& cfg, RngStream& init_rng);

/// Shared guts of a (possibly flow-transformed) Mahalanobis score:
/// g = ||L(X) (T(Y; X) - mu(X))||^2 with lower-triangular positive-diagonal
/// L, or the low-rank quadratic form z^T (D + V V^T) z.
class MahalanobisCore {
 public:
  MahalanobisCore() = default;
  MahalanobisCore(const FrontierConfig& cfg, ParamSet& params, RngStream& init_rng);

  struct Eval {
    Var score;    // Bx1
    Var log_det;  // Bx1; zero tensor when unit-det normalized
  };

  Eval score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
             RngStream* rng) const;
  /// log det L(X), Bx1 (zero when unit-det).
  Var log_det(Tape& tape, const std::vector<Var>& bound, Var x) const;

  Tensor eval_scores(const ParamSet& params, const Tensor& x, const Tensor& y) const;
  const CouplingStack& flow() const { return flow_; }
  /// Normalized full-rank factor rows (diag, strict-lower) for diagnostics.
  std::pair<Tensor, Tensor> shape_entries(const ParamSet& params, const Tensor& x) const;

 private:
  struct Shape {
    Var diag, off;    // full rank
    Var ldiag, lfac;  // low rank D, V
    Var log_det;      // Bx1 (zero var when unit-det)
  };
  Shape shape(Tape& tape, const std::vector<Var>& bound, Var x) const;

  int d_ = 0;
  bool identity_flow_ = false;
  bool unit_det_ = false;
  ShapeMode mode_ = ShapeMode::kFullRank;
  int rank_ = 0;
  CouplingStack flow_;
  Mlp center_;
  Mlp shape_net_;
};

/// G(X,Y) = |Y - f(X)| (d = 1) or ||Y - f(X)||_2; interval / ball regions.
class NormFrontier : public Frontier {
 public:
  NormFrontier(FrontierConfig cfg, RngStream& init_rng);
  Var score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
            RngStream* rng) const override;
  Var volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
             bool log_space) const override;
  Tensor eval_center(const Tensor& x) const;

 private:
  Mlp center_;
};

class FlowMahalanobis : public Frontier {
 public:
  FlowMahalanobis(FrontierConfig cfg, RngStream& init_rng);
  Var score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
            RngStream* rng) const override;
  Var volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
             bool log_space) const override;
  /// Score together with log det L, for losses that need both consistently.
  MahalanobisCore::Eval score_with_logdet(Tape& tape, const std::vector<Var>& bound, Var x,
                                          Var y, Mode mode, RngStream* rng) const;
  const MahalanobisCore& core() const { return core_; }

 private:
  MahalanobisCore core_;
};

class UnionOfFlows : public Frontier {
 public:
  UnionOfFlows(FrontierConfig cfg, RngStream& init_rng);
  Var score(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
            RngStream* rng) const override;
  Var volume(Tape& tape, const std::vector<Var>& bound, Var t, Var x,
             bool log_space) const override;
  Tensor eval_scores(const Tensor& x, const Tensor& y) const override;  // hard min

  std::vector<int> mixture_param_ids() const override { return mixture_ids_; }
  void set_softmin_beta(double beta) { beta_ = beta; }
  double softmin_beta() const override { return beta_; }
  void set_weights_frozen(bool f) override { frozen_ = f; }
  bool weights_frozen() const override { return frozen_; }

  /// Component scores (p-scaled), BxK.
  Var component_scores(Tape& tape, const std::vector<Var>& bound, Var x, Var y, Mode mode,
                       RngStream* rng) const;
  Tensor eval_mixture_weights(const Tensor& x) const;  // BxK

 private:
  Var mixture_weights(Tape& tape, const std::vector<Var>& bound, Var x) const;

  std::vector<MahalanobisCore> cores_;
  Mlp mixture_;
  std::vector<int> mixture_ids_;
  double beta_ = 1.0;
  bool frozen_ = true;
};

}  // namespace sls
