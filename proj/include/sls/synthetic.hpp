#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sls/dataset.hpp"

namespace sls {

/// Built-in generative tasks with known conditional structure. All are
/// seedable and deterministic; most expose a conditional density for
/// highest-density-region oracles.
enum class Task {
  kGauss2d,      // heteroscedastic 2D Gaussian, closed-form oracle
  kOutlier2d,    // Gaussian core + 10% uniform box contamination
  kHetExp2d,     // independent exponential coordinates, X-scaled
  kExpMix1d,     // two-sided exponential mixture, unimodal -> bimodal in X
  kExp1d,        // plain Exp(1) response, X uninformative
  kStar2d,       // fixed-X angularly modulated radial density
  kThreeMode2d,  // fixed-X three-component Gaussian mixture
  kMad1d,        // sin trend + centered asymmetric exponential noise
  kMadJump1d,    // same with a jump at X > 0.5
};

Task task_from_name(const std::string& name);
std::string task_name(Task task);
std::vector<std::string> task_names();

struct TaskInfo {
  int x_dim = 1;
  int d = 1;
  bool has_density = true;
  bool fixed_x = false;  // conditional distribution ignores X
};
TaskInfo task_info(Task task);

Dataset generate(Task task, int n, std::uint64_t seed);

/// m draws of Y | X = x (x is one row of features).
Tensor sample_y_given_x(Task task, const std::vector<double>& x, int m, RngStream& rng);

/// Conditional density p(y | x), normalized.
double conditional_density(Task task, const std::vector<double>& x,
                           const std::vector<double>& y);

struct HdrOracle {
  double volume = 0.0;     // Lebesgue volume of the tau-HDR
  double threshold = 0.0;  // density threshold defining it
  std::function<bool(const std::vector<double>&)> member;
};

/// tau-HDR of Y | X = x: closed form for Gaussian tasks, density-grid
/// thresholding otherwise (grid_per_dim cells per dimension).
HdrOracle oracle_hdr(Task task, const std::vector<double>& x, double tau,
                     int grid_per_dim = 2000);

// Gaussian structure of kGauss2d / the clean component of kOutlier2d:
// Y = mu(x) + L(x) Z with Z standard normal.
std::vector<double> gauss2d_mu(double x);
std::vector<double> gauss2d_chol(double x);  // (l11, l21, l22)

double chi_squared_quantile(int dof, double p);

}  // namespace sls
