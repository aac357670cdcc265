#pragma once

#include <utility>

namespace sls {

/// Annealed-logistic decay for one side of the quantile window:
///   phi(n) = e0 + (e1 - e0) * (sigma(k (t - t0)) - sigma(-k t0)) / (1 - sigma(-k t0))
/// with t = max(0, n - warmup). Starts at e0 (= error_init), decays
/// monotonically to e1 (= error_min > 0).
struct SideSchedule {
  double error_init = 0.2;
  double error_min = 0.03;
  double steepness = 0.1;  // k
  double center = 100.0;   // t0, in post-warm-up steps

  double at(long t) const;  // t = steps past warm-up, clamped at 0
};

/// Both window sides plus level clipping so the pinball levels stay in (0,1).
struct WindowSchedule {
  SideSchedule low;   // phi, subtracted from tau
  SideSchedule high;  // psi, added to tau
  long warmup = 0;    // n0

  /// Defaults tied to the run length: error_init = 0.8 min(tau, 1-tau),
  /// error_min = 0.03, t0 = 0.3 (T - n0), k = 10 / t0.
  static WindowSchedule defaults(double tau, long total_steps, long warmup);

  /// (phi(n), psi(n)) clipped so tau - phi >= eps and tau + psi <= 1 - eps.
  std::pair<double, double> bounds(long step, double tau, double eps = 1e-4) const;
};

}  // namespace sls
