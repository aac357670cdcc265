#include "sls/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sls {

CalibrationResult calibrate_scores(const std::vector<double>& normalized_scores, double tau) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("calibrate: tau must be in (0,1)");
  if (normalized_scores.empty())
    throw std::invalid_argument("calibrate: empty calibration set");
  int n = static_cast<int>(normalized_scores.size());
  int rank = static_cast<int>(std::ceil((n + 1) * tau));
  CalibrationResult res;
  res.n_cal = n;
  res.achieved_level = static_cast<double>(rank) / (n + 1);
  if (rank > n) {
    res.scale = std::numeric_limits<double>::infinity();
    return res;
  }
  std::vector<double> s = normalized_scores;
  std::nth_element(s.begin(), s.begin() + (rank - 1), s.end());
  res.scale = s[rank - 1];
  if (!(res.scale > 0.0))
    throw std::invalid_argument("calibrate: non-positive normalized score at the target rank");
  return res;
}

CalibrationResult calibrate(const PredictionRegion& region, const Tensor& x, const Tensor& y,
                            double tau) {
  Tensor g = region.scores(x, y);
  Tensor q = region.qnet() ? region.qnet()->eval_mid(x) : Tensor::full(x.rows(), 1, 1.0);
  std::vector<double> s(g.rows());
  for (int i = 0; i < g.rows(); ++i) {
    if (!(q(i, 0) > 0.0)) throw std::invalid_argument("calibrate: non-positive quantile");
    s[i] = g(i, 0) / q(i, 0);
  }
  return calibrate_scores(s, tau);
}

double empirical_coverage(const PredictionRegion& region, const Tensor& x, const Tensor& y) {
  auto in = region.members(x, y);
  std::size_t hits = 0;
  for (bool b : in) hits += b ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(in.size());
}

}  // namespace sls
