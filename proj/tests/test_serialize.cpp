#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "sls/serialize.hpp"

using namespace sls;

namespace {
std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<PredictionRegion> make_region(std::uint64_t seed) {
  FrontierConfig cfg;
  cfg.family = Family::kUnionOfFlows;
  cfg.x_dim = 2;
  cfg.d = 2;
  cfg.components = 2;
  cfg.flow_hidden = {8};
  cfg.center_hidden = {8};
  cfg.shape_hidden = {8};
  cfg.mixture_hidden = {8};
  RngStream init(seed, "f");
  auto frontier = make_frontier(cfg, init);
  RngStream r(seed, "perturb");
  for (int i = 0; i < frontier->params().count(); ++i) {
    Tensor& t = frontier->params().value(i);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] += 0.1 * r.normal();
  }
  frontier->set_softmin_beta(17.5);
  frontier->set_weights_frozen(false);

  QuantileNetConfig qcfg;
  qcfg.x_dim = 2;
  qcfg.hidden_dims = {8};
  RngStream qinit(seed, "q");
  QuantileNet qnet(qcfg, qinit);
  auto region = std::make_unique<PredictionRegion>(std::move(frontier), std::move(qnet), 0.85);
  region->set_scale(1.23);
  return region;
}
}  // namespace

TEST_CASE("model round trip preserves every output") {
  const char* path = "test_tmp_model.bin";
  auto region = make_region(5);
  CalibrationResult cal;
  cal.scale = 1.23;
  cal.n_cal = 321;
  cal.achieved_level = 0.851;
  ModelMetadata meta;
  meta.seed = 99;
  meta.config_hash = "abc123";
  save_model(path, *region, cal, meta);

  LoadedModel lm = load_model(path);
  CHECK(lm.meta.seed == 99);
  CHECK(lm.meta.config_hash == "abc123");
  REQUIRE(lm.calibration.has_value());
  CHECK(lm.calibration->n_cal == 321);
  CHECK(lm.calibration->scale == 1.23);
  CHECK(lm.region->tau() == 0.85);
  CHECK(lm.region->scale() == 1.23);
  CHECK(lm.region->frontier().softmin_beta() == 17.5);
  CHECK_FALSE(lm.region->frontier().weights_frozen());

  RngStream rng(7, "probe");
  Tensor x(10, 2), y(10, 2);
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = rng.uniform(-1, 1);
    y[k] = rng.uniform(-2, 2);
  }
  Tensor g0 = region->scores(x, y);
  Tensor g1 = lm.region->scores(x, y);
  Tensor t0 = region->thresholds(x);
  Tensor t1 = lm.region->thresholds(x);
  Tensor v0 = region->volumes(x);
  Tensor v1 = lm.region->volumes(x);
  for (int i = 0; i < 10; ++i) {
    CHECK(g0(i, 0) == g1(i, 0));
    CHECK(t0(i, 0) == t1(i, 0));
    CHECK(v0(i, 0) == v1(i, 0));
  }
  std::remove(path);
}

TEST_CASE("saving the same model twice is byte-identical") {
  auto region = make_region(6);
  ModelMetadata meta;
  meta.seed = 4;
  meta.config_hash = "feed";
  save_model("test_tmp_a.bin", *region, std::nullopt, meta);
  save_model("test_tmp_b.bin", *region, std::nullopt, meta);
  CHECK(slurp("test_tmp_a.bin") == slurp("test_tmp_b.bin"));
  std::remove("test_tmp_a.bin");
  std::remove("test_tmp_b.bin");
}

TEST_CASE("infinite calibration scale survives the round trip") {
  const char* path = "test_tmp_inf.bin";
  auto region = make_region(8);
  region->set_scale(1.0);
  CalibrationResult cal;
  cal.scale = std::numeric_limits<double>::infinity();
  cal.n_cal = 1;
  cal.achieved_level = 1.0;
  ModelMetadata meta;
  save_model(path, *region, cal, meta);
  LoadedModel lm = load_model(path);
  REQUIRE(lm.calibration.has_value());
  CHECK(std::isinf(lm.calibration->scale));
  std::remove(path);
}

TEST_CASE("garbage files are rejected") {
  const char* path = "test_tmp_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a model";
  }
  CHECK_THROWS(load_model(path));
  std::remove(path);
  CHECK_THROWS(load_model("does_not_exist.bin"));
}
