#pragma once

#include <vector>

#include "sls/region.hpp"

namespace sls {

struct CalibrationResult {
  double scale = 1.0;  // r; +inf sentinel when the rank exceeds n_cal
  int n_cal = 0;
  double achieved_level = 0.0;  // rank / (n_cal + 1)
};

/// r from raw normalized scores s_i = G_i / q_tau(X_i): the ceil((n+1) tau)-th
/// smallest value, ties broken by <= (conservative).
CalibrationResult calibrate_scores(const std::vector<double>& normalized_scores, double tau);

/// Split-conformal calibration of a region; does not mutate the region.
CalibrationResult calibrate(const PredictionRegion& region, const Tensor& x, const Tensor& y,
                            double tau);

/// Fraction of (x, y) rows inside the region.
double empirical_coverage(const PredictionRegion& region, const Tensor& x, const Tensor& y);

}  // namespace sls
