#include "sls/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace sls {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap map(const Tensor& t) { return ConstMatMap(t.data(), t.rows(), t.cols()); }
MatMap map(Tensor& t) { return MatMap(t.data(), t.rows(), t.cols()); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

Tape::Var Tape::make(Tensor value, bool track) {
  Node n;
  n.value = std::move(value);
  n.track = track;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::adj(int id) {
  Node& n = nodes_[id];
  if (n.adj.empty()) n.adj = Tensor(n.value.rows(), n.value.cols());
  return n.adj;
}

Tape::Var Tape::input(Tensor value) { return make(std::move(value), false); }

Tape::Var Tape::param(const Tensor& value, int pid) {
  Var v = make(value, true);
  nodes_[v.id].param_id = pid;
  return v;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.adj.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.adj;
}

void Tape::backward(Var root) {
  const Tensor& r = val(root);
  if (r.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  adj(root.id)[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.track && !n.adj.empty() && n.back) n.back(*this);
  }
}

// --- binary elementwise ---

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "add");
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] + y[k];
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k];
      }
      if (t.tracked(b)) {
        Tensor& gb = t.adj(b.id);
        for (std::size_t k = 0; k < go.size(); ++k) gb[k] += go[k];
      }
    });
  return v;
}

Tape::Var Tape::sub(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "sub");
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] - y[k];
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k];
      }
      if (t.tracked(b)) {
        Tensor& gb = t.adj(b.id);
        for (std::size_t k = 0; k < go.size(); ++k) gb[k] -= go[k];
      }
    });
  return v;
}

Tape::Var Tape::mul(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "mul");
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * y[k];
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& x = t.val(a);
      const Tensor& y = t.val(b);
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k] * y[k];
      }
      if (t.tracked(b)) {
        Tensor& gb = t.adj(b.id);
        for (std::size_t k = 0; k < go.size(); ++k) gb[k] += go[k] * x[k];
      }
    });
  return v;
}

Tape::Var Tape::maximum(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "maximum");
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] >= y[k] ? x[k] : y[k];
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& x = t.val(a);
      const Tensor& y = t.val(b);
      for (std::size_t k = 0; k < go.size(); ++k) {
        if (x[k] >= y[k]) {
          if (t.tracked(a)) t.adj(a.id)[k] += go[k];
        } else if (t.tracked(b)) {
          t.adj(b.id)[k] += go[k];
        }
      }
    });
  return v;
}

Tape::Var Tape::minimum(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "minimum");
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] <= y[k] ? x[k] : y[k];
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& x = t.val(a);
      const Tensor& y = t.val(b);
      for (std::size_t k = 0; k < go.size(); ++k) {
        if (x[k] <= y[k]) {
          if (t.tracked(a)) t.adj(a.id)[k] += go[k];
        } else if (t.tracked(b)) {
          t.adj(b.id)[k] += go[k];
        }
      }
    });
  return v;
}

// --- unary elementwise ---

Tape::Var Tape::add_const(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tape::Var Tape::scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tape::Var Tape::exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tape::Var Tape::log(Var a) {
  const Tensor& x = val(a);
  for (std::size_t k = 0; k < x.size(); ++k)
    if (x[k] <= 0.0) throw std::domain_error("log: non-positive input");
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tape::Var Tape::softplus(Var a) {
  return unary(a, [](double x) { return stable_softplus(x); },
               [](double x, double) { return stable_sigmoid(x); });
}

Tape::Var Tape::sigmoid(Var a) {
  return unary(a, [](double x) { return stable_sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Tape::Var Tape::relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tape::Var Tape::square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tape::Var Tape::sqrt(Var a) {
  const Tensor& x = val(a);
  for (std::size_t k = 0; k < x.size(); ++k)
    if (x[k] < 0.0) throw std::domain_error("sqrt: negative input");
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Tape::Var Tape::abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tape::Var Tape::pow_const(Var a, double p) {
  const Tensor& x = val(a);
  if (p != std::floor(p))
    for (std::size_t k = 0; k < x.size(); ++k)
      if (x[k] < 0.0) throw std::domain_error("pow_const: negative base with fractional exponent");
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tape::Var Tape::max_const(Var a, double c) {
  return unary(a, [c](double x) { return x >= c ? x : c; },
               [c](double x, double) { return x >= c ? 1.0 : 0.0; });
}

Tape::Var Tape::min_const(Var a, double c) {
  return unary(a, [c](double x) { return x <= c ? x : c; },
               [c](double x, double) { return x <= c ? 1.0 : 0.0; });
}

// --- reductions / broadcasting ---

Tape::Var Tape::sum(Var a) {
  const Tensor& x = val(a);
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k];
  Var v = make(Tensor::scalar(s), tracked(a));
  if (tracked(a))
    set_back(v, [a, v](Tape& t) {
      double g = t.nodes_[v.id].adj[0];
      Tensor& ga = t.adj(a.id);
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g;
    });
  return v;
}

Tape::Var Tape::mean(Var a) {
  const Tensor& x = val(a);
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k];
  double inv = 1.0 / static_cast<double>(x.size());
  Var v = make(Tensor::scalar(s * inv), tracked(a));
  if (tracked(a))
    set_back(v, [a, v, inv](Tape& t) {
      double g = t.nodes_[v.id].adj[0] * inv;
      Tensor& ga = t.adj(a.id);
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g;
    });
  return v;
}

Tape::Var Tape::sum_rows(Var a) {
  const Tensor& x = val(a);
  Tensor out(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += x(i, j);
    out(i, 0) = s;
  }
  Var v = make(std::move(out), tracked(a));
  if (tracked(a))
    set_back(v, [a, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      Tensor& ga = t.adj(a.id);
      for (int i = 0; i < ga.rows(); ++i)
        for (int j = 0; j < ga.cols(); ++j) ga(i, j) += go(i, 0);
    });
  return v;
}

Tape::Var Tape::add_bias(Var a, Var bias) {
  const Tensor& x = val(a);
  const Tensor& b = val(bias);
  if (b.rows() != 1 || b.cols() != x.cols())
    throw std::invalid_argument("add_bias: bias must be 1x" + std::to_string(x.cols()));
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) + b(0, j);
  bool tr = tracked(a) || tracked(bias);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, bias, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k];
      }
      if (t.tracked(bias)) {
        Tensor& gb = t.adj(bias.id);
        for (int i = 0; i < go.rows(); ++i)
          for (int j = 0; j < go.cols(); ++j) gb(0, j) += go(i, j);
      }
    });
  return v;
}

Tape::Var Tape::mul_rowvec(Var a, Var gain) {
  const Tensor& x = val(a);
  const Tensor& g = val(gain);
  if (g.rows() != 1 || g.cols() != x.cols())
    throw std::invalid_argument("mul_rowvec: gain must be 1x" + std::to_string(x.cols()));
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * g(0, j);
  bool tr = tracked(a) || tracked(gain);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, gain, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& x = t.val(a);
      const Tensor& g = t.val(gain);
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (int i = 0; i < go.rows(); ++i)
          for (int j = 0; j < go.cols(); ++j) ga(i, j) += go(i, j) * g(0, j);
      }
      if (t.tracked(gain)) {
        Tensor& gg = t.adj(gain.id);
        for (int i = 0; i < go.rows(); ++i)
          for (int j = 0; j < go.cols(); ++j) gg(0, j) += go(i, j) * x(i, j);
      }
    });
  return v;
}

Tape::Var Tape::mul_bcast(Var a, Var s) {
  const Tensor& x = val(a);
  const Tensor& sc = val(s);
  if (sc.cols() != 1 || sc.rows() != x.rows())
    throw std::invalid_argument("mul_bcast: scale must be " + std::to_string(x.rows()) + "x1");
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * sc(i, 0);
  bool tr = tracked(a) || tracked(s);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, s, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& x = t.val(a);
      const Tensor& sc = t.val(s);
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        for (int i = 0; i < go.rows(); ++i)
          for (int j = 0; j < go.cols(); ++j) ga(i, j) += go(i, j) * sc(i, 0);
      }
      if (t.tracked(s)) {
        Tensor& gs = t.adj(s.id);
        for (int i = 0; i < go.rows(); ++i)
          for (int j = 0; j < go.cols(); ++j) gs(i, 0) += go(i, j) * x(i, j);
      }
    });
  return v;
}

// --- structural ---

Tape::Var Tape::matmul(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.cols() != y.rows())
    throw std::invalid_argument("matmul: inner dimensions " + x.shape_str() + " vs " +
                                y.shape_str());
  Tensor out(x.rows(), y.cols());
  map(out) = map(x) * map(y);
  bool tr = tracked(a) || tracked(b);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [a, b, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      if (t.tracked(a)) {
        Tensor& ga = t.adj(a.id);
        map(ga) += map(go) * map(t.val(b)).transpose();
      }
      if (t.tracked(b)) {
        Tensor& gb = t.adj(b.id);
        map(gb) += map(t.val(a)).transpose() * map(go);
      }
    });
  return v;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  int rows = val(parts[0]).rows();
  int cols = 0;
  bool tr = false;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += val(p).cols();
    tr = tr || tracked(p);
  }
  Tensor out(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& x = val(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < x.cols(); ++j) out(i, off + j) = x(i, j);
    off += x.cols();
  }
  Var v = make(std::move(out), tr);
  if (tr) {
    std::vector<Var> ps = parts;
    set_back(v, [ps, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      int off = 0;
      for (Var p : ps) {
        const Tensor& x = t.val(p);
        if (t.tracked(p)) {
          Tensor& gp = t.adj(p.id);
          for (int i = 0; i < go.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j) gp(i, j) += go(i, off + j);
        }
        off += x.cols();
      }
    });
  }
  return v;
}

Tape::Var Tape::slice_cols(Var a, int start, int count) {
  const Tensor& x = val(a);
  if (start < 0 || count <= 0 || start + count > x.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor out(x.rows(), count);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < count; ++j) out(i, j) = x(i, start + j);
  Var v = make(std::move(out), tracked(a));
  if (tracked(a))
    set_back(v, [a, v, start, count](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      Tensor& ga = t.adj(a.id);
      for (int i = 0; i < go.rows(); ++i)
        for (int j = 0; j < count; ++j) ga(i, start + j) += go(i, j);
    });
  return v;
}

// --- neural building blocks ---

Tape::Var Tape::layer_norm(Var a, double eps) {
  const Tensor& x = val(a);
  int rows = x.rows(), cols = x.cols();
  Tensor out(rows, cols);
  std::vector<double> inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double m = 0.0;
    for (int j = 0; j < cols; ++j) m += x(i, j);
    m /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      double c = x(i, j) - m;
      var += c * c;
    }
    var /= cols;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int j = 0; j < cols; ++j) out(i, j) = (x(i, j) - m) * inv;
  }
  Var v = make(std::move(out), tracked(a));
  if (tracked(a))
    set_back(v, [a, v, inv_std](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& xhat = t.val(v);
      Tensor& ga = t.adj(a.id);
      int cols = xhat.cols();
      for (int i = 0; i < xhat.rows(); ++i) {
        double mg = 0.0, mgx = 0.0;
        for (int j = 0; j < cols; ++j) {
          mg += go(i, j);
          mgx += go(i, j) * xhat(i, j);
        }
        mg /= cols;
        mgx /= cols;
        for (int j = 0; j < cols; ++j)
          ga(i, j) += inv_std[i] * (go(i, j) - mg - xhat(i, j) * mgx);
      }
    });
  return v;
}

Tape::Var Tape::dropout(Var a, double rate, Mode mode, RngStream* rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (mode == Mode::kEval || rate == 0.0) return a;
  if (rng == nullptr) throw std::invalid_argument("dropout: train mode requires an RNG stream");
  const Tensor& x = val(a);
  // Inverted scaling: eval is a no-op.
  double keep = 1.0 - rate;
  Tensor mask(x.rows(), x.cols());
  for (std::size_t k = 0; k < mask.size(); ++k)
    mask[k] = rng->uniform() < keep ? 1.0 / keep : 0.0;
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * mask[k];
  Var v = make(std::move(out), tracked(a));
  if (tracked(a))
    set_back(v, [a, v, mask](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      Tensor& ga = t.adj(a.id);
      for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k] * mask[k];
    });
  return v;
}

Tape::Var Tape::softmax_rows(Var a) {
  const Tensor& x = val(a);
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (int j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (int j = 0; j < x.cols(); ++j) out(i, j) /= z;
  }
  Var v = make(std::move(out), tracked(a));
  if (tracked(a))
    set_back(v, [a, v](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& y = t.val(v);
      Tensor& ga = t.adj(a.id);
      for (int i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (int j = 0; j < y.cols(); ++j) dot += go(i, j) * y(i, j);
        for (int j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (go(i, j) - dot);
      }
    });
  return v;
}

// --- batched linear-algebra kernels ---

Tape::Var Tape::tril_matvec(Var diag, Var off, Var z, int d) {
  const Tensor& dg = val(diag);
  const Tensor& of = val(off);
  const Tensor& zz = val(z);
  int m = d * (d - 1) / 2;
  int rows = zz.rows();
  if (dg.cols() != d || zz.cols() != d || of.cols() != m || dg.rows() != rows ||
      of.rows() != rows)
    throw std::invalid_argument("tril_matvec: shape mismatch");
  Tensor out(rows, d);
  for (int b = 0; b < rows; ++b)
    for (int i = 0; i < d; ++i) {
      double s = dg(b, i) * zz(b, i);
      int base = i * (i - 1) / 2;
      for (int j = 0; j < i; ++j) s += of(b, base + j) * zz(b, j);
      out(b, i) = s;
    }
  bool tr = tracked(diag) || tracked(off) || tracked(z);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [diag, off, z, v, d](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& dg = t.val(diag);
      const Tensor& of = t.val(off);
      const Tensor& zz = t.val(z);
      for (int b = 0; b < go.rows(); ++b) {
        for (int i = 0; i < d; ++i) {
          double g = go(b, i);
          if (g == 0.0) continue;
          int base = i * (i - 1) / 2;
          if (t.tracked(diag)) t.adj(diag.id)(b, i) += g * zz(b, i);
          if (t.tracked(off))
            for (int j = 0; j < i; ++j) t.adj(off.id)(b, base + j) += g * zz(b, j);
          if (t.tracked(z)) {
            t.adj(z.id)(b, i) += g * dg(b, i);
            for (int j = 0; j < i; ++j) t.adj(z.id)(b, j) += g * of(b, base + j);
          }
        }
      }
    });
  return v;
}

Tape::Var Tape::batched_matvec_t(Var vmat, Var z, int d, int r) {
  const Tensor& vm = val(vmat);
  const Tensor& zz = val(z);
  int rows = zz.rows();
  if (vm.cols() != d * r || zz.cols() != d || vm.rows() != rows)
    throw std::invalid_argument("batched_matvec_t: shape mismatch");
  Tensor out(rows, r);
  for (int b = 0; b < rows; ++b)
    for (int c = 0; c < r; ++c) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += vm(b, i * r + c) * zz(b, i);
      out(b, c) = s;
    }
  bool tr = tracked(vmat) || tracked(z);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [vmat, z, v, d, r](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& vm = t.val(vmat);
      const Tensor& zz = t.val(z);
      for (int b = 0; b < go.rows(); ++b)
        for (int c = 0; c < r; ++c) {
          double g = go(b, c);
          if (g == 0.0) continue;
          for (int i = 0; i < d; ++i) {
            if (t.tracked(vmat)) t.adj(vmat.id)(b, i * r + c) += g * zz(b, i);
            if (t.tracked(z)) t.adj(z.id)(b, i) += g * vm(b, i * r + c);
          }
        }
    });
  return v;
}

Tape::Var Tape::lowrank_logdet_sqrt(Var diag, Var vmat, int d, int r) {
  const Tensor& dg = val(diag);
  const Tensor& vm = val(vmat);
  int rows = dg.rows();
  if (dg.cols() != d || vm.cols() != d * r || vm.rows() != rows)
    throw std::invalid_argument("lowrank_logdet_sqrt: shape mismatch");
  Tensor out(rows, 1);
  // P^{-1} per row, kept for the backward pass.
  std::vector<Eigen::MatrixXd> pinv(rows);
  for (int b = 0; b < rows; ++b) {
    Eigen::VectorXd dvec(d);
    for (int i = 0; i < d; ++i) {
      if (dg(b, i) <= 0.0)
        throw std::invalid_argument("lowrank_logdet_sqrt: non-positive diagonal entry");
      dvec(i) = dg(b, i);
    }
    Eigen::MatrixXd V(d, r);
    for (int i = 0; i < d; ++i)
      for (int c = 0; c < r; ++c) V(i, c) = vm(b, i * r + c);
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(r, r) +
                        V.transpose() * dvec.cwiseInverse().asDiagonal() * V;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    double logdet_m = 0.0;
    for (int c = 0; c < r; ++c) logdet_m += std::log(llt.matrixL()(c, c));
    logdet_m *= 2.0;
    out(b, 0) = 0.5 * (dvec.array().log().sum() + logdet_m);
    Eigen::MatrixXd dinv_v = dvec.cwiseInverse().asDiagonal() * V;
    pinv[b] = Eigen::MatrixXd(dvec.cwiseInverse().asDiagonal()) -
              dinv_v * llt.solve(dinv_v.transpose());
  }
  bool tr = tracked(diag) || tracked(vmat);
  Var v = make(std::move(out), tr);
  if (tr)
    set_back(v, [diag, vmat, v, d, r, pinv](Tape& t) {
      const Tensor& go = t.nodes_[v.id].adj;
      const Tensor& vm = t.val(vmat);
      for (int b = 0; b < go.rows(); ++b) {
        double g = go(b, 0);
        if (g == 0.0) continue;
        const Eigen::MatrixXd& P = pinv[b];
        if (t.tracked(diag))
          for (int i = 0; i < d; ++i) t.adj(diag.id)(b, i) += g * 0.5 * P(i, i);
        if (t.tracked(vmat)) {
          Eigen::MatrixXd V(d, r);
          for (int i = 0; i < d; ++i)
            for (int c = 0; c < r; ++c) V(i, c) = vm(b, i * r + c);
          Eigen::MatrixXd PV = P * V;
          for (int i = 0; i < d; ++i)
            for (int c = 0; c < r; ++c) t.adj(vmat.id)(b, i * r + c) += g * PV(i, c);
        }
      }
    });
  return v;
}

}  // namespace sls
