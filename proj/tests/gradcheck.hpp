#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sls/nn.hpp"

namespace sls::testing {

/// Relative error between tape gradients and central finite differences of
/// a scalar loss built deterministically from the current parameter values.
inline double gradcheck(ParamSet& params,
                        const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                        double h = 1e-5) {
  Tape tape;
  auto bound = params.bind(tape);
  Var loss = build(tape, bound);
  tape.backward(loss);
  std::vector<Tensor> analytic = params.collect_grads(tape, bound);

  auto eval = [&]() {
    Tape t;
    auto b = params.bind(t);
    return t.val(build(t, b)).item();
  };

  double num = 0.0, den = 0.0;
  for (int i = 0; i < params.count(); ++i) {
    Tensor& p = params.value(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      double orig = p[k];
      p[k] = orig + h;
      double up = eval();
      p[k] = orig - h;
      double down = eval();
      p[k] = orig;
      double fd = (up - down) / (2.0 * h);
      double diff = analytic[i][k] - fd;
      num += diff * diff;
      den += fd * fd;
    }
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-12);
}

}  // namespace sls::testing
