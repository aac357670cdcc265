#include "sls/region.hpp"

#include <cmath>
#include <stdexcept>

namespace sls {

void PredictionRegion::set_scale(double r) {
  if (!(r > 0.0) && !std::isinf(r))
    throw std::invalid_argument("PredictionRegion: scale must be positive or +inf");
  scale_ = r;
}

Tensor PredictionRegion::thresholds(const Tensor& x) const {
  Tensor t = qnet_ ? qnet_->eval_mid(x) : Tensor::full(x.rows(), 1, 1.0);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] *= scale_;
  return t;
}

Tensor PredictionRegion::scores(const Tensor& x, const Tensor& y) const {
  return frontier_->eval_scores(x, y);
}

std::vector<bool> PredictionRegion::members(const Tensor& x, const Tensor& y) const {
  Tensor g = scores(x, y);
  Tensor t = thresholds(x);
  std::vector<bool> in(g.rows());
  for (int i = 0; i < g.rows(); ++i) in[i] = g(i, 0) <= t(i, 0);
  return in;
}

Tensor PredictionRegion::volumes(const Tensor& x) const {
  return frontier_->eval_volumes(thresholds(x), x, false);
}

}  // namespace sls
