#include "sls/synthetic.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sls {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kMixSep = 4.0;        // gap of the second expmix1d mode
constexpr double kOutlierHalf = 6.0;   // contamination box is [-6, 6]^2
constexpr double kTriR = 4.0 / 1.7320508075688772;  // circumradius, side 4
constexpr double kTriSigma = 0.4;
// Normalizer of the star density exp(-r / s(theta)), s = 0.5 + 0.3 cos 5t:
// integral of s(theta)^2 over [0, 2pi).
const double kStarZ = 2.0 * kPi * (0.25 + 0.5 * 0.09);

double star_s(double theta) { return 0.5 + 0.3 * std::cos(5.0 * theta); }

double mixture_weight(double x) { return 0.25 * (x + 1.0); }  // in [0, 0.5]

double normal_pdf2(double dx, double dy, double sigma) {
  double q = (dx * dx + dy * dy) / (sigma * sigma);
  return std::exp(-0.5 * q) / (2.0 * kPi * sigma * sigma);
}

struct Tri {
  double cx[3], cy[3];
};
Tri tri_centers() {
  Tri t;
  t.cx[0] = 0.0;
  t.cy[0] = kTriR;
  t.cx[1] = -2.0;
  t.cy[1] = -0.5 * kTriR;
  t.cx[2] = 2.0;
  t.cy[2] = -0.5 * kTriR;
  return t;
}

double mad_trend(Task task, double x) {
  double f = std::sin(3.0 * x);
  if (task == Task::kMadJump1d && x > 0.5) f += 4.0;
  return f;
}
double mad_spread(double x) { return x * x + 0.5; }

double gamma2_draw(double scale, RngStream& rng) {
  // shape-2 Gamma as a sum of two exponentials
  return rng.exponential(scale) + rng.exponential(scale);
}

void sample_one(Task task, const std::vector<double>& x, RngStream& rng, double* y) {
  switch (task) {
    case Task::kGauss2d: {
      auto mu = gauss2d_mu(x[0]);
      auto l = gauss2d_chol(x[0]);
      double z1 = rng.normal(), z2 = rng.normal();
      y[0] = mu[0] + l[0] * z1;
      y[1] = mu[1] + l[1] * z1 + l[2] * z2;
      break;
    }
    case Task::kOutlier2d: {
      if (rng.uniform() < 0.1) {
        y[0] = rng.uniform(-kOutlierHalf, kOutlierHalf);
        y[1] = rng.uniform(-kOutlierHalf, kOutlierHalf);
      } else {
        sample_one(Task::kGauss2d, x, rng, y);
      }
      break;
    }
    case Task::kHetExp2d: {
      y[0] = rng.exponential(0.5 + x[0]);
      y[1] = rng.exponential(1.5 - x[0]);
      break;
    }
    case Task::kExpMix1d: {
      double w = mixture_weight(x[0]);
      if (rng.uniform() < w)
        y[0] = kMixSep + rng.exponential(1.0);
      else
        y[0] = -rng.exponential(1.0);
      break;
    }
    case Task::kExp1d:
      y[0] = rng.exponential(1.0);
      break;
    case Task::kStar2d: {
      double theta;
      for (;;) {  // theta density proportional to s(theta)^2, bound 0.64
        theta = rng.uniform(0.0, 2.0 * kPi);
        double s = star_s(theta);
        if (rng.uniform() * 0.64 <= s * s) break;
      }
      double r = gamma2_draw(star_s(theta), rng);
      y[0] = r * std::cos(theta);
      y[1] = r * std::sin(theta);
      break;
    }
    case Task::kThreeMode2d: {
      Tri t = tri_centers();
      std::size_t k = rng.index(3);
      y[0] = t.cx[k] + kTriSigma * rng.normal();
      y[1] = t.cy[k] + kTriSigma * rng.normal();
      break;
    }
    case Task::kMad1d:
    case Task::kMadJump1d: {
      double w = rng.exponential(1.0) - 1.0;
      y[0] = mad_trend(task, x[0]) + mad_spread(x[0]) * w;
      break;
    }
  }
}

std::vector<double> sample_x(Task task, RngStream& rng) {
  TaskInfo info = task_info(task);
  if (info.fixed_x) return {0.0};
  switch (task) {
    case Task::kExpMix1d:
    case Task::kMad1d:
    case Task::kMadJump1d:
      return {rng.uniform(-1.0, 1.0)};
    default:
      return {rng.uniform()};
  }
}

struct Box {
  double lo[2], hi[2];
  int dims = 1;
};

Box oracle_box(Task task, const std::vector<double>& x) {
  Box b;
  switch (task) {
    case Task::kOutlier2d:
      b.dims = 2;
      b.lo[0] = b.lo[1] = -kOutlierHalf;
      b.hi[0] = b.hi[1] = kOutlierHalf;
      break;
    case Task::kHetExp2d:
      b.dims = 2;
      b.lo[0] = b.lo[1] = 0.0;
      b.hi[0] = 30.0 * (0.5 + x[0]);
      b.hi[1] = 30.0 * (1.5 - x[0]);
      break;
    case Task::kExpMix1d:
      b.dims = 1;
      b.lo[0] = -30.0;
      b.hi[0] = kMixSep + 30.0;
      break;
    case Task::kExp1d:
      b.dims = 1;
      b.lo[0] = 0.0;
      b.hi[0] = 30.0;
      break;
    case Task::kStar2d:
      b.dims = 2;
      b.lo[0] = b.lo[1] = -16.0;
      b.hi[0] = b.hi[1] = 16.0;
      break;
    case Task::kThreeMode2d:
      b.dims = 2;
      b.lo[0] = b.lo[1] = -5.0;
      b.hi[0] = b.hi[1] = 5.0;
      break;
    case Task::kMad1d:
    case Task::kMadJump1d: {
      b.dims = 1;
      double f = mad_trend(task, x[0]), r = mad_spread(x[0]);
      b.lo[0] = f - 1.5 * r;
      b.hi[0] = f + 30.0 * r;
      break;
    }
    default:
      throw std::invalid_argument("oracle_box: task has a closed-form oracle");
  }
  return b;
}
}  // namespace

Task task_from_name(const std::string& name) {
  for (const auto& n : task_names())
    if (n == name) {
      if (name == "gauss2d") return Task::kGauss2d;
      if (name == "outlier2d") return Task::kOutlier2d;
      if (name == "hetexp2d") return Task::kHetExp2d;
      if (name == "expmix1d") return Task::kExpMix1d;
      if (name == "exp1d") return Task::kExp1d;
      if (name == "star2d") return Task::kStar2d;
      if (name == "threemode2d") return Task::kThreeMode2d;
      if (name == "mad1d") return Task::kMad1d;
      if (name == "madjump1d") return Task::kMadJump1d;
    }
  throw std::invalid_argument("unknown task: " + name);
}

std::string task_name(Task task) {
  switch (task) {
    case Task::kGauss2d:
      return "gauss2d";
    case Task::kOutlier2d:
      return "outlier2d";
    case Task::kHetExp2d:
      return "hetexp2d";
    case Task::kExpMix1d:
      return "expmix1d";
    case Task::kExp1d:
      return "exp1d";
    case Task::kStar2d:
      return "star2d";
    case Task::kThreeMode2d:
      return "threemode2d";
    case Task::kMad1d:
      return "mad1d";
    case Task::kMadJump1d:
      return "madjump1d";
  }
  throw std::invalid_argument("task_name: unknown task");
}

std::vector<std::string> task_names() {
  return {"gauss2d", "outlier2d", "hetexp2d", "expmix1d", "exp1d",
          "star2d",  "threemode2d", "mad1d",  "madjump1d"};
}

TaskInfo task_info(Task task) {
  TaskInfo info;
  switch (task) {
    case Task::kGauss2d:
    case Task::kOutlier2d:
    case Task::kHetExp2d:
      info = {1, 2, true, false};
      break;
    case Task::kStar2d:
    case Task::kThreeMode2d:
      info = {1, 2, true, true};
      break;
    case Task::kExpMix1d:
    case Task::kExp1d:
    case Task::kMad1d:
    case Task::kMadJump1d:
      info = {1, 1, true, false};
      break;
  }
  return info;
}

std::vector<double> gauss2d_mu(double x) { return {x, -x}; }

std::vector<double> gauss2d_chol(double x) {
  return {0.5 + 0.5 * x, 0.3 * x, 0.4 + 0.2 * x};
}

double chi_squared_quantile(int dof, double p) {
  boost::math::chi_squared dist(dof);
  return boost::math::quantile(dist, p);
}

Dataset generate(Task task, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  TaskInfo info = task_info(task);
  RngStream rng(seed, "gen/" + task_name(task));
  Dataset out;
  out.x = Tensor(n, info.x_dim);
  out.y = Tensor(n, info.d);
  std::vector<double> yrow(info.d);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x = sample_x(task, rng);
    for (int j = 0; j < info.x_dim; ++j) out.x(i, j) = x[j];
    sample_one(task, x, rng, yrow.data());
    for (int j = 0; j < info.d; ++j) out.y(i, j) = yrow[j];
  }
  return out;
}

Tensor sample_y_given_x(Task task, const std::vector<double>& x, int m, RngStream& rng) {
  TaskInfo info = task_info(task);
  Tensor y(m, info.d);
  std::vector<double> row(info.d);
  for (int i = 0; i < m; ++i) {
    sample_one(task, x, rng, row.data());
    for (int j = 0; j < info.d; ++j) y(i, j) = row[j];
  }
  return y;
}

double conditional_density(Task task, const std::vector<double>& x,
                           const std::vector<double>& y) {
  switch (task) {
    case Task::kGauss2d: {
      auto mu = gauss2d_mu(x[0]);
      auto l = gauss2d_chol(x[0]);
      // solve L z = y - mu for lower-triangular L
      double u0 = y[0] - mu[0], u1 = y[1] - mu[1];
      double z1 = u0 / l[0];
      double z2 = (u1 - l[1] * z1) / l[2];
      double det = l[0] * l[2];
      return std::exp(-0.5 * (z1 * z1 + z2 * z2)) / (2.0 * kPi * det);
    }
    case Task::kOutlier2d: {
      double core = conditional_density(Task::kGauss2d, x, y);
      double box = (std::abs(y[0]) <= kOutlierHalf && std::abs(y[1]) <= kOutlierHalf)
                       ? 1.0 / (4.0 * kOutlierHalf * kOutlierHalf)
                       : 0.0;
      return 0.9 * core + 0.1 * box;
    }
    case Task::kHetExp2d: {
      double s1 = 0.5 + x[0], s2 = 1.5 - x[0];
      if (y[0] < 0.0 || y[1] < 0.0) return 0.0;
      return std::exp(-y[0] / s1 - y[1] / s2) / (s1 * s2);
    }
    case Task::kExpMix1d: {
      double w = mixture_weight(x[0]);
      double p = 0.0;
      if (y[0] <= 0.0) p += (1.0 - w) * std::exp(y[0]);
      if (y[0] >= kMixSep) p += w * std::exp(kMixSep - y[0]);
      return p;
    }
    case Task::kExp1d:
      return y[0] < 0.0 ? 0.0 : std::exp(-y[0]);
    case Task::kStar2d: {
      double r = std::hypot(y[0], y[1]);
      double theta = std::atan2(y[1], y[0]);
      return std::exp(-r / star_s(theta)) / kStarZ;
    }
    case Task::kThreeMode2d: {
      Tri t = tri_centers();
      double p = 0.0;
      for (int k = 0; k < 3; ++k)
        p += normal_pdf2(y[0] - t.cx[k], y[1] - t.cy[k], kTriSigma);
      return p / 3.0;
    }
    case Task::kMad1d:
    case Task::kMadJump1d: {
      double f = mad_trend(task, x[0]), r = mad_spread(x[0]);
      double w = (y[0] - f) / r;
      if (w < -1.0) return 0.0;
      return std::exp(-(w + 1.0)) / r;
    }
  }
  throw std::invalid_argument("conditional_density: unknown task");
}

HdrOracle oracle_hdr(Task task, const std::vector<double>& x, double tau, int grid_per_dim) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("oracle_hdr: tau in (0,1)");
  if (task == Task::kGauss2d) {
    double q = chi_squared_quantile(2, tau);
    auto mu = gauss2d_mu(x[0]);
    auto l = gauss2d_chol(x[0]);
    double det = l[0] * l[2];
    HdrOracle o;
    o.volume = kPi * det * q;
    o.threshold = std::exp(-0.5 * q) / (2.0 * kPi * det);
    o.member = [mu, l, q](const std::vector<double>& y) {
      double z1 = (y[0] - mu[0]) / l[0];
      double z2 = (y[1] - mu[1] - l[1] * z1) / l[2];
      return z1 * z1 + z2 * z2 <= q;
    };
    return o;
  }
  Box b = oracle_box(task, x);
  int g = b.dims == 2 ? std::min(grid_per_dim, 700) : grid_per_dim;
  double cell = 1.0;
  std::vector<double> step(b.dims);
  for (int j = 0; j < b.dims; ++j) {
    step[j] = (b.hi[j] - b.lo[j]) / g;
    cell *= step[j];
  }
  long total = b.dims == 2 ? static_cast<long>(g) * g : g;
  std::vector<double> dens(total);
  std::vector<double> yv(b.dims);
  for (long idx = 0; idx < total; ++idx) {
    long i = b.dims == 2 ? idx / g : idx;
    long j = b.dims == 2 ? idx % g : 0;
    yv[0] = b.lo[0] + (i + 0.5) * step[0];
    if (b.dims == 2) yv[1] = b.lo[1] + (j + 0.5) * step[1];
    dens[idx] = conditional_density(task, x, yv);
  }
  std::vector<long> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](long a, long c) { return dens[a] > dens[c]; });
  double mass_total = 0.0;
  for (double p : dens) mass_total += p * cell;
  if (mass_total < 0.99)
    throw std::runtime_error("oracle_hdr: bounding box captures only " +
                             std::to_string(mass_total) + " mass");
  double mass = 0.0;
  long count = 0;
  double threshold = dens[order[0]];
  for (long k = 0; k < total; ++k) {
    mass += dens[order[k]] * cell / mass_total;
    ++count;
    threshold = dens[order[k]];
    if (mass >= tau) break;
  }
  HdrOracle o;
  o.volume = count * cell;
  o.threshold = threshold;
  o.member = [task, x, threshold](const std::vector<double>& y) {
    return conditional_density(task, x, y) >= threshold;
  };
  return o;
}

}  // namespace sls
