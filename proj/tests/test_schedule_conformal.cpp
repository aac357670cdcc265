#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "sls/conformal.hpp"
#include "sls/schedule.hpp"

using namespace sls;

TEST_CASE("window schedule endpoints and monotonicity") {
  SideSchedule s;
  s.error_init = 0.24;
  s.error_min = 0.03;
  s.center = 300.0;
  s.steepness = 10.0 / 300.0;

  CHECK(s.at(0) == doctest::Approx(0.24));  // starts exactly at error_init
  CHECK(s.at(-50) == doctest::Approx(0.24));
  CHECK(s.at(1000000) == doctest::Approx(0.03).epsilon(1e-6));

  double prev = s.at(0);
  for (long t = 1; t <= 2000; t += 10) {
    double cur = s.at(t);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }

  // midpoint value from the closed form at t = t0
  double sig0 = 1.0 / (1.0 + std::exp(10.0));
  double expect = 0.24 + (0.03 - 0.24) * (0.5 - sig0) / (1.0 - sig0);
  CHECK(s.at(300) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("window bounds keep pinball levels inside (0,1)") {
  WindowSchedule w = WindowSchedule::defaults(0.97, 1000, 300);
  for (long n : {0L, 300L, 500L, 999L}) {
    auto [phi, psi] = w.bounds(n, 0.97);
    CHECK(0.97 - phi > 0.0);
    CHECK(0.97 + psi < 1.0);
    CHECK(phi > 0.0);
    CHECK(psi > 0.0);
  }
  auto [phi0, psi0] = WindowSchedule::defaults(0.9, 1000, 300).bounds(300, 0.9);
  CHECK(phi0 == doctest::Approx(0.8 * 0.1));  // error_init at warm-up end
  CHECK(psi0 == doctest::Approx(0.8 * 0.1));
}

TEST_CASE("calibration order statistic") {
  std::vector<double> s;
  for (int i = 1; i <= 9; ++i) s.push_back(0.5 * i);  // 0.5 .. 4.5
  CalibrationResult r = calibrate_scores(s, 0.9);
  CHECK(r.scale == doctest::Approx(4.5));  // rank ceil(10 * 0.9) = 9
  CHECK(r.n_cal == 9);
  CHECK(r.achieved_level == doctest::Approx(0.9));

  CalibrationResult tiny = calibrate_scores({1.0}, 0.9);
  CHECK(std::isinf(tiny.scale));  // rank 2 > n = 1

  CHECK_THROWS(calibrate_scores({}, 0.9));
  CHECK_THROWS(calibrate_scores({1.0}, 1.5));
}

TEST_CASE("normalization invariance of membership decisions") {
  // scaling q by c and dividing scores by c leaves r * q unchanged
  std::vector<double> g{0.3, 0.8, 1.2, 2.0, 0.6, 1.5, 0.9, 1.1, 0.4};
  std::vector<double> q{1.0, 1.1, 0.9, 1.3, 0.8, 1.2, 1.0, 0.95, 1.05};
  double c = 3.7;
  std::vector<double> s1, s2;
  for (std::size_t i = 0; i < g.size(); ++i) {
    s1.push_back(g[i] / q[i]);
    s2.push_back(g[i] / (c * q[i]));
  }
  double r1 = calibrate_scores(s1, 0.5).scale;
  double r2 = calibrate_scores(s2, 0.5).scale;
  for (std::size_t i = 0; i < g.size(); ++i) {
    bool m1 = g[i] <= r1 * q[i];
    bool m2 = g[i] <= r2 * c * q[i];
    CHECK(m1 == m2);
  }
}

TEST_CASE("split-conformal coverage guarantee by simulation") {
  // frozen score distribution; resample calibration/test splits
  RngStream rng(42, "sim");
  const int n_cal = 200, n_test = 400, reps = 300;
  const double tau = 0.8;
  double mean_cov = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> cal(n_cal), test(n_test);
    for (auto& v : cal) v = rng.exponential(1.0);
    for (auto& v : test) v = rng.exponential(1.0);
    double r = calibrate_scores(cal, tau).scale;
    int hits = 0;
    for (double v : test) hits += v <= r ? 1 : 0;
    mean_cov += static_cast<double>(hits) / n_test / reps;
  }
  double upper = tau + 1.0 / (n_cal + 1);
  double se = std::sqrt(tau * (1 - tau) / (n_test * reps));
  CHECK(mean_cov >= tau - 3 * se);
  CHECK(mean_cov <= upper + 3 * se);
}

TEST_CASE("coverage is monotone in the scale") {
  RngStream rng(43, "mono");
  std::vector<double> scores(500);
  for (auto& v : scores) v = rng.exponential(1.0);
  auto coverage = [&](double r) {
    int hits = 0;
    for (double v : scores) hits += v <= r ? 1 : 0;
    return static_cast<double>(hits) / scores.size();
  };
  double prev = 0.0;
  for (double r = 0.1; r < 5.0; r += 0.1) {
    double c = coverage(r);
    CHECK(c >= prev);
    prev = c;
  }
}
