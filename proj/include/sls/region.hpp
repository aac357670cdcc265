#pragma once

#include <memory>
#include <optional>

#include "sls/frontier.hpp"
#include "sls/quantile.hpp"

namespace sls {

/// A trained conditional prediction region {y : G(X,y) <= r * q_tau(X)}.
/// Without a quantile net the threshold is the constant 1 (scaled by r),
/// which is what the likelihood baseline uses. Uncalibrated regions have
/// r = 1 explicitly.
class PredictionRegion {
 public:
  PredictionRegion(std::unique_ptr<Frontier> frontier, std::optional<QuantileNet> qnet,
                   double tau)
      : frontier_(std::move(frontier)), qnet_(std::move(qnet)), tau_(tau) {}

  const Frontier& frontier() const { return *frontier_; }
  Frontier& frontier() { return *frontier_; }
  const std::optional<QuantileNet>& qnet() const { return qnet_; }
  std::optional<QuantileNet>& qnet() { return qnet_; }
  double tau() const { return tau_; }
  double scale() const { return scale_; }
  void set_scale(double r);

  /// r * q_tau(X) per row, Bx1.
  Tensor thresholds(const Tensor& x) const;
  Tensor scores(const Tensor& x, const Tensor& y) const;
  /// Closed-set membership G <= r * q_tau.
  std::vector<bool> members(const Tensor& x, const Tensor& y) const;
  /// Closed-form region volume at the per-row threshold, Bx1.
  Tensor volumes(const Tensor& x) const;

 private:
  std::unique_ptr<Frontier> frontier_;
  std::optional<QuantileNet> qnet_;
  double tau_ = 0.9;
  double scale_ = 1.0;
};

}  // namespace sls
