#include "sls/quantile.hpp"

#include <algorithm>
#include <stdexcept>

namespace sls {

namespace {
constexpr double kRawClamp = 30.0;  // exp overflow guard
constexpr double kEps = 1e-6;

void check_level(double beta) {
  if (beta <= 0.0 || beta >= 1.0)
    throw std::invalid_argument("pinball: level must be in (0,1)");
}
}  // namespace

double pinball_loss(double beta, double g, double q_hat) {
  check_level(beta);
  double u = g - q_hat;
  return std::max(beta * u, (beta - 1.0) * u);
}

Var pinball(Tape& tape, double beta, Var g, Var q_hat) {
  check_level(beta);
  Var u = tape.sub(g, q_hat);
  return tape.maximum(tape.scale(u, beta), tape.scale(u, beta - 1.0));
}

void QuantileNetConfig::validate() const {
  if (x_dim < 1) throw std::invalid_argument("QuantileNetConfig: x_dim must be >= 1");
  if (hidden_dims.empty())
    throw std::invalid_argument("QuantileNetConfig: needs at least one hidden layer");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("QuantileNetConfig: dropout_rate must be in [0,1)");
}

QuantileNet::QuantileNet(const QuantileNetConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
  cfg_.validate();
  int rep = cfg_.hidden_dims.back();
  MlpConfig bcfg;
  bcfg.input_dim = cfg_.x_dim;
  bcfg.hidden_dims = std::vector<int>(cfg_.hidden_dims.begin(), cfg_.hidden_dims.end() - 1);
  bcfg.output_dim = rep;
  bcfg.use_layer_norm = cfg_.use_layer_norm;
  bcfg.dropout_rate = cfg_.dropout_rate;
  RngStream brng = init_rng.split("backbone");
  backbone_ = Mlp(bcfg, params_, brng);
  RngStream hrng = init_rng.split("heads");
  for (int h = 0; h < 3; ++h) {
    head_ids_.push_back(params_.add(glorot_uniform(rep, 1, hrng)));
    head_ids_.push_back(params_.add(Tensor(1, 1)));
  }
}

QuantileNet::Triple QuantileNet::forward(Tape& tape, const std::vector<Var>& bound, Var x,
                                         Mode mode, RngStream* dropout_rng) const {
  Var rep = tape.relu(backbone_.forward(tape, bound, x, mode, dropout_rng));
  Var q[3];
  for (int h = 0; h < 3; ++h) {
    Var raw = tape.add_bias(tape.matmul(rep, bound[head_ids_[2 * h]]),
                            bound[head_ids_[2 * h + 1]]);
    q[h] = tape.add_const(tape.exp(tape.min_const(raw, kRawClamp)), kEps);
  }
  // Sort the three outputs per sample; gradients follow the assignment.
  Var lo = tape.minimum(tape.minimum(q[0], q[1]), q[2]);
  Var hi = tape.maximum(tape.maximum(q[0], q[1]), q[2]);
  Var mid = tape.sub(tape.sub(tape.add(tape.add(q[0], q[1]), q[2]), lo), hi);
  return Triple{lo, mid, hi};
}

Tensor QuantileNet::eval_mid(const Tensor& x) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Triple t = forward(tape, bound, tape.input(x), Mode::kEval, nullptr);
  return tape.val(t.mid);
}

Tensor QuantileNet::eval_all(const Tensor& x) const {
  Tape tape;
  auto bound = params_.bind(tape);
  Triple t = forward(tape, bound, tape.input(x), Mode::kEval, nullptr);
  const Tensor& lo = tape.val(t.low);
  const Tensor& mid = tape.val(t.mid);
  const Tensor& hi = tape.val(t.high);
  Tensor out(lo.rows(), 3);
  for (int i = 0; i < lo.rows(); ++i) {
    out(i, 0) = lo(i, 0);
    out(i, 1) = mid(i, 0);
    out(i, 2) = hi(i, 0);
  }
  return out;
}

}  // namespace sls
