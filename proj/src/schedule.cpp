#include "sls/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sls {

namespace {
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

double SideSchedule::at(long t) const {
  if (error_min <= 0.0) throw std::invalid_argument("SideSchedule: error_min must be > 0");
  double tt = t < 0 ? 0.0 : static_cast<double>(t);
  double s0 = sigmoid(-steepness * center);
  double frac = (sigmoid(steepness * (tt - center)) - s0) / (1.0 - s0);
  return error_init + (error_min - error_init) * frac;
}

WindowSchedule WindowSchedule::defaults(double tau, long total_steps, long warmup) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("WindowSchedule: tau in (0,1)");
  if (warmup < 0 || warmup >= total_steps)
    throw std::invalid_argument("WindowSchedule: need 0 <= warmup < total_steps");
  WindowSchedule w;
  w.warmup = warmup;
  double t0 = std::max(1.0, 0.3 * static_cast<double>(total_steps - warmup));
  SideSchedule s;
  s.error_init = 0.8 * std::min(tau, 1.0 - tau);
  s.error_min = std::min(0.03, 0.5 * s.error_init);
  s.center = t0;
  s.steepness = 10.0 / t0;
  w.low = s;
  w.high = s;
  return w;
}

std::pair<double, double> WindowSchedule::bounds(long step, double tau, double eps) const {
  long t = step - warmup;
  double phi = low.at(t);
  double psi = high.at(t);
  phi = std::min(phi, tau - eps);
  psi = std::min(psi, 1.0 - tau - eps);
  phi = std::max(phi, eps);
  psi = std::max(psi, eps);
  return {phi, psi};
}

}  // namespace sls
