#include "sls/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sls/conformal.hpp"

namespace sls {

double BoundingBox::volume() const {
  double v = 1.0;
  for (std::size_t j = 0; j < lo.size(); ++j) v *= hi[j] - lo[j];
  return v;
}

BoundingBox response_box(const Tensor& y, double expand) {
  BoundingBox box;
  box.lo.assign(y.cols(), 0.0);
  box.hi.assign(y.cols(), 0.0);
  for (int j = 0; j < y.cols(); ++j) {
    double mn = y(0, j), mx = y(0, j);
    for (int i = 1; i < y.rows(); ++i) {
      mn = std::min(mn, y(i, j));
      mx = std::max(mx, y(i, j));
    }
    double pad = expand * (mx - mn);
    if (pad <= 0.0) pad = 1.0;
    box.lo[j] = mn - pad;
    box.hi[j] = mx + pad;
  }
  return box;
}

double mc_volume(const PredictionRegion& region, const std::vector<double>& xrow,
                 const BoundingBox& box, int m, RngStream& rng, bool* zero_hits) {
  int d = static_cast<int>(box.lo.size());
  // chunked so large m keeps the evaluation tape's memory bounded
  const int chunk = 10000;
  long hits = 0;
  for (int done = 0; done < m; done += chunk) {
    int b = std::min(chunk, m - done);
    Tensor ys(b, d);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < d; ++j) ys(i, j) = rng.uniform(box.lo[j], box.hi[j]);
    Tensor xs(b, static_cast<int>(xrow.size()));
    for (int i = 0; i < b; ++i)
      for (std::size_t j = 0; j < xrow.size(); ++j) xs(i, static_cast<int>(j)) = xrow[j];
    auto in = region.members(xs, ys);
    hits += std::count(in.begin(), in.end(), true);
  }
  if (zero_hits) *zero_hits = hits == 0;
  return box.volume() * static_cast<double>(hits) / m;
}

namespace {
// Equal-mass bins along the leading principal direction of the features.
double binned_deviation(const PredictionRegion& region, const Dataset& test, double tau,
                        int bins) {
  int n = test.n(), p = test.x.cols();
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = test.x(i, j);
  Eigen::RowVectorXd mean = X.colwise().mean();
  Eigen::MatrixXd C = (X.rowwise() - mean).transpose() * (X.rowwise() - mean) / n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  Eigen::VectorXd pc = es.eigenvectors().col(p - 1);
  std::vector<double> proj(n);
  for (int i = 0; i < n; ++i) proj[i] = (X.row(i) - mean).dot(pc);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return proj[a] < proj[b]; });
  auto in = region.members(test.x, test.y);
  double dev = 0.0;
  int used = 0;
  for (int b = 0; b < bins; ++b) {
    int lo = b * n / bins, hi = (b + 1) * n / bins;
    if (hi <= lo) continue;
    double cov = 0.0;
    for (int k = lo; k < hi; ++k) cov += in[order[k]] ? 1.0 : 0.0;
    cov /= hi - lo;
    dev += std::abs(cov - tau);
    ++used;
  }
  return used ? dev / used : 0.0;
}
}  // namespace

EvalReport evaluate_region(const PredictionRegion& region, const Dataset& test,
                           std::optional<Task> task, const EvalConfig& cfg) {
  if (test.n() < 2) throw std::invalid_argument("evaluate_region: test set too small");
  EvalReport rep;
  rep.n_test = test.n();
  rep.coverage = empirical_coverage(region, test.x, test.y);

  int d = test.y.cols();
  Tensor vols = region.volumes(test.x);
  double sum = 0.0, sum_root = 0.0;
  for (int i = 0; i < vols.rows(); ++i) {
    sum += vols(i, 0);
    sum_root += std::pow(std::max(vols(i, 0), 0.0), 1.0 / d);
  }
  rep.mean_volume = sum / vols.rows();
  rep.mean_scaled_volume = sum_root / vols.rows();

  RngStream rng(cfg.seed, "eval");
  if (cfg.mc_volume_x > 0 && cfg.mc_box_points > 0) {
    BoundingBox box = response_box(test.y, cfg.box_expand);
    RngStream mc_rng = rng.split("mc-volume");
    int nx = std::min(cfg.mc_volume_x, test.n());
    double acc = 0.0;
    for (int k = 0; k < nx; ++k) {
      int i = k * test.n() / nx;
      std::vector<double> xrow(test.x.cols());
      for (int j = 0; j < test.x.cols(); ++j) xrow[j] = test.x(i, j);
      bool zero = false;
      acc += mc_volume(region, xrow, box, cfg.mc_box_points, mc_rng, &zero);
      rep.mc_zero_hits = rep.mc_zero_hits || zero;
    }
    rep.mc_mean_volume = acc / nx;
  }

  double tau = region.tau();
  if (task && task_info(*task).has_density) {
    RngStream crng = rng.split("cond");
    int nx = std::min(cfg.cond_x, test.n());
    double dev = 0.0;
    for (int k = 0; k < nx; ++k) {
      int i = k * test.n() / nx;
      std::vector<double> xrow(test.x.cols());
      for (int j = 0; j < test.x.cols(); ++j) xrow[j] = test.x(i, j);
      Tensor ys = sample_y_given_x(*task, xrow, cfg.cond_draws, crng);
      Tensor xs(cfg.cond_draws, test.x.cols());
      for (int r = 0; r < cfg.cond_draws; ++r)
        for (int j = 0; j < test.x.cols(); ++j) xs(r, j) = xrow[j];
      auto in = region.members(xs, ys);
      double cov =
          static_cast<double>(std::count(in.begin(), in.end(), true)) / cfg.cond_draws;
      dev += std::abs(cov - tau);
    }
    rep.conditional_deviation = dev / nx;
    rep.conditional_method = "oracle-sampling";
  } else if (test.n() >= cfg.bins * 20) {
    rep.conditional_deviation = binned_deviation(region, test, tau, cfg.bins);
    rep.conditional_method = "binned";
  } else {
    rep.conditional_method = "none";
  }
  return rep;
}

}  // namespace sls
