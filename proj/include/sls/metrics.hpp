#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sls/region.hpp"
#include "sls/synthetic.hpp"

namespace sls {

struct EvalConfig {
  int mc_box_points = 20000;   // Monte-Carlo points per cross-checked X
  int mc_volume_x = 20;        // how many test X's get the Monte-Carlo check
  int cond_x = 50;             // X's for the conditional-coverage estimate
  int cond_draws = 500;        // fresh Y | X draws per X
  double box_expand = 0.5;     // bounding box = data range widened by this
  int bins = 10;               // binned conditional estimator (no oracle)
  std::uint64_t seed = 0;
};

struct EvalReport {
  int n_test = 0;
  double coverage = 0.0;
  double mean_volume = 0.0;         // closed-form surrogate
  double mean_scaled_volume = 0.0;  // mean of Vol^(1/d)
  double mc_mean_volume = -1.0;     // -1 when not computed
  bool mc_zero_hits = false;
  double conditional_deviation = -1.0;
  std::string conditional_method;  // "oracle-sampling" | "binned" | "none"
};

/// Axis-aligned box around the response sample, each side widened by
/// `expand` of its range.
struct BoundingBox {
  std::vector<double> lo, hi;
  double volume() const;
};
BoundingBox response_box(const Tensor& y, double expand);

/// Monte-Carlo volume of the region at one X via uniform box sampling.
/// Returns 0 (and sets zero_hits) when no sampled point is a member.
double mc_volume(const PredictionRegion& region, const std::vector<double>& xrow,
                 const BoundingBox& box, int m, RngStream& rng, bool* zero_hits = nullptr);

/// Coverage, volumes, and a conditional-coverage deviation estimate:
/// oracle sampling when `task` is given, equal-mass binning on the first
/// principal feature direction otherwise.
EvalReport evaluate_region(const PredictionRegion& region, const Dataset& test,
                           std::optional<Task> task, const EvalConfig& cfg);

}  // namespace sls
