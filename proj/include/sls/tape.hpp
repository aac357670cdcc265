#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "sls/rng.hpp"
#include "sls/tensor.hpp"

namespace sls {

enum class Mode { kTrain, kEval };

/// Reverse-mode differentiation tape. Nodes are appended in topological
/// order during the forward pass; backward() fills exact adjoints for every
/// node reachable from a scalar root. One tape per minibatch; the graph is
/// rebuilt each step.
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant leaf (no gradient tracking).
  Var input(Tensor value);
  /// Trainable leaf. param_id tags the node so gradients can be collected
  /// per parameter after backward().
  Var param(const Tensor& value, int param_id);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  /// Adjoint of v after backward(); zero tensor if v was never reached.
  Tensor grad(Var v) const;
  int param_id(Var v) const { return nodes_[v.id].param_id; }
  bool tracked(Var v) const { return nodes_[v.id].track; }
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Var root);

  // --- elementwise / arithmetic ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_const(Var a, double c);
  Var scale(Var a, double c);
  Var exp(Var a);
  Var log(Var a);       // domain error on non-positive input
  Var softplus(Var a);  // numerically stable log(1 + e^x)
  Var sigmoid(Var a);
  Var relu(Var a);
  Var square(Var a);
  Var sqrt(Var a);  // domain error on negative input
  Var abs(Var a);
  Var pow_const(Var a, double p);  // requires a >= 0 for non-integer p
  Var max_const(Var a, double c);
  Var min_const(Var a, double c);
  Var maximum(Var a, Var b);
  Var minimum(Var a, Var b);

  // --- reductions / broadcasting ---
  Var sum(Var a);           // -> 1x1
  Var mean(Var a);          // -> 1x1
  Var sum_rows(Var a);      // BxK -> Bx1
  Var add_bias(Var a, Var bias);    // BxK + 1xK
  Var mul_rowvec(Var a, Var gain);  // BxK * 1xK
  Var mul_bcast(Var a, Var s);      // BxK * Bx1

  // --- structural ---
  Var matmul(Var a, Var b);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int count);

  // --- neural building blocks ---
  Var layer_norm(Var a, double eps = 1e-5);  // per-row, pre-affine
  Var dropout(Var a, double rate, Mode mode, RngStream* rng);
  Var softmax_rows(Var a);

  // --- batched linear-algebra kernels ---
  /// Per-row lower-triangular matvec: out_i = diag_i * z_i + sum_{j<i} off_{ij} z_j.
  /// diag: Bxd, off: B x d(d-1)/2 (row-major strict lower), z: Bxd -> Bxd.
  Var tril_matvec(Var diag, Var off, Var z, int d);
  /// Per-row V^T z with V stored row-major as d x r per sample.
  /// v: B x (d*r), z: Bxd -> Bxr.
  Var batched_matvec_t(Var v, Var z, int d, int r);
  /// Per-row 0.5 * log det(D + V V^T) via the matrix determinant lemma.
  /// diag: Bxd strictly positive, v: B x (d*r) -> Bx1.
  Var lowrank_logdet_sqrt(Var diag, Var v, int d, int r);

 private:
  struct Node {
    Tensor value;
    Tensor adj;  // lazily allocated
    std::function<void(Tape&)> back;
    int param_id = -1;
    bool track = false;
  };

  Var make(Tensor value, bool track);
  void set_back(Var v, std::function<void(Tape&)> fn) { nodes_[v.id].back = std::move(fn); }
  Tensor& adj(int id);
  bool has_adj(int id) const { return !nodes_[id].adj.empty(); }

  template <class F, class DF>
  Var unary(Var a, F f, DF df);

  std::vector<Node> nodes_;
};

using Var = Tape::Var;

template <class F, class DF>
Tape::Var Tape::unary(Var a, F f, DF df) {
  const Tensor& x = val(a);
  Tensor y(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = f(x[k]);
  Var v = make(std::move(y), tracked(a));
  if (tracked(a)) {
    set_back(v, [a, v, df](Tape& t) {
      const Tensor& x = t.val(a);
      const Tensor& y = t.val(v);
      const Tensor& go = t.nodes_[v.id].adj;
      Tensor& ga = t.adj(a.id);
      for (std::size_t k = 0; k < x.size(); ++k) ga[k] += go[k] * df(x[k], y[k]);
    });
  }
  return v;
}

}  // namespace sls
