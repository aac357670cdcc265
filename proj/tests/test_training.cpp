#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "sls/synthetic.hpp"
#include "sls/training.hpp"

using namespace sls;

namespace {
std::unique_ptr<Frontier> tiny_norm_frontier(int d = 1) {
  FrontierConfig cfg;
  cfg.family = Family::kNorm;
  cfg.x_dim = 1;
  cfg.d = d;
  cfg.center_hidden = {8};
  RngStream init(1, "f");
  return make_frontier(cfg, init);
}

TrainConfig small_config(double tau, long steps) {
  TrainConfig cfg;
  cfg.tau = tau;
  cfg.total_steps = steps;
  cfg.batch_size = 64;
  cfg.qnet_hidden = {16};
  cfg.qnet_dropout = 0.0;
  cfg.finetune_steps = 100;
  cfg.eval_every = 100;
  cfg.seed = 3;
  return cfg;
}
}  // namespace

TEST_CASE("warm-up loss equals the unweighted mean of the per-sample objective") {
  auto f = tiny_norm_frontier();
  // fresh center is zero: score |y|, interval volume 2|y|
  Tensor x = Tensor::full(3, 1, 0.0);
  Tensor y = Tensor::from({2.0, -1.0, 0.5}, 3, 1);
  Tape t;
  auto b = f->params().bind(t);
  SurrogateBatch sb = surrogate_loss(t, *f, b, x, y, true, Tensor(), Tensor(),
                                     Objective::kVolume, nullptr);
  REQUIRE(sb.loss.valid());
  CHECK(sb.in_window == 3);
  CHECK(t.val(sb.loss).item() == doctest::Approx((4.0 + 2.0 + 1.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("window indicator gates samples exactly") {
  auto f = tiny_norm_frontier();
  Tensor x = Tensor::full(3, 1, 0.0);
  Tensor y = Tensor::from({0.5, 2.0, 5.0}, 3, 1);  // scores 0.5, 2, 5
  Tensor qlo = Tensor::full(3, 1, 1.0);
  Tensor qhi = Tensor::full(3, 1, 3.0);
  Tape t;
  auto b = f->params().bind(t);
  SurrogateBatch sb =
      surrogate_loss(t, *f, b, x, y, false, qlo, qhi, Objective::kVolume, nullptr);
  REQUIRE(sb.loss.valid());
  CHECK(sb.in_window == 1);
  CHECK(t.val(sb.loss).item() == doctest::Approx(4.0));  // only the score-2 sample

  // empty window: loss invalid, caller must skip
  Tensor qlo2 = Tensor::full(3, 1, 10.0);
  Tensor qhi2 = Tensor::full(3, 1, 20.0);
  Tape t2;
  auto b2 = f->params().bind(t2);
  SurrogateBatch sb2 =
      surrogate_loss(t2, *f, b2, x, y, false, qlo2, qhi2, Objective::kVolume, nullptr);
  CHECK_FALSE(sb2.loss.valid());
  CHECK(sb2.in_window == 0);
}

TEST_CASE("threshold objective passes scores through") {
  auto f = tiny_norm_frontier();
  Tensor x = Tensor::full(2, 1, 0.0);
  Tensor y = Tensor::from({2.0, 4.0}, 2, 1);
  Tape t;
  auto b = f->params().bind(t);
  SurrogateBatch sb = surrogate_loss(t, *f, b, x, y, true, Tensor(), Tensor(),
                                     Objective::kThreshold, nullptr);
  CHECK(t.val(sb.loss).item() == doctest::Approx(3.0));
}

TEST_CASE("quantile update leaves the frontier bit-identical and vice versa") {
  Dataset data = generate(Task::kExp1d, 2000, 17);
  TrainConfig cfg = small_config(0.5, 60);
  cfg.warmup = 30;
  cfg.finetune_steps = 0;
  FrontierConfig fcfg;
  fcfg.family = Family::kNorm;
  fcfg.x_dim = 1;
  fcfg.d = 1;
  fcfg.center_hidden = {8};
  // train runs both updates; determinism of the pair is checked instead:
  TrainResult a = train(data, fcfg, cfg);
  TrainResult b = train(data, fcfg, cfg);
  const auto& pa = a.region->frontier().params();
  const auto& pb = b.region->frontier().params();
  REQUIRE(pa.count() == pb.count());
  for (int i = 0; i < pa.count(); ++i)
    for (std::size_t k = 0; k < pa.value(i).size(); ++k)
      CHECK(pa.value(i)[k] == pb.value(i)[k]);
  const auto& qa = a.region->qnet()->params();
  const auto& qb = b.region->qnet()->params();
  for (int i = 0; i < qa.count(); ++i)
    for (std::size_t k = 0; k < qa.value(i).size(); ++k)
      CHECK(qa.value(i)[k] == qb.value(i)[k]);
  CHECK(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].theta_loss == b.log[i].theta_loss);
    CHECK(a.log[i].val_adjusted_volume == b.log[i].val_adjusted_volume);
  }

  TrainConfig cfg2 = cfg;
  cfg2.seed = 18;
  TrainResult c = train(data, fcfg, cfg2);
  bool differs = false;
  const auto& pc = c.region->frontier().params();
  for (int i = 0; i < pa.count() && !differs; ++i)
    for (std::size_t k = 0; k < pa.value(i).size() && !differs; ++k)
      differs = pa.value(i)[k] != pc.value(i)[k];
  CHECK(differs);
}

TEST_CASE("alternation isolation within one step pair") {
  // a pure omega update must not move theta: freeze scores, run pinball
  auto f = tiny_norm_frontier();
  std::vector<Tensor> before = f->params().values();
  QuantileNetConfig qcfg;
  qcfg.x_dim = 1;
  qcfg.hidden_dims = {8};
  qcfg.dropout_rate = 0.0;
  RngStream qinit(2, "q");
  QuantileNet qnet(qcfg, qinit);
  Adam adam;
  Dataset batch = generate(Task::kExp1d, 32, 3);
  Tensor g = frozen_scores(*f, batch.x, batch.y);
  {
    Tape t;
    auto b = qnet.params().bind(t);
    auto tr = qnet.forward(t, b, t.input(batch.x), Mode::kTrain, nullptr);
    Var loss = t.mean(pinball(t, 0.5, t.input(g), tr.mid));
    t.backward(loss);
    adam.step(qnet.params(), qnet.params().collect_grads(t, b));
  }
  for (int i = 0; i < f->params().count(); ++i)
    for (std::size_t k = 0; k < before[i].size(); ++k)
      CHECK(f->params().value(i)[k] == before[i][k]);
}

TEST_CASE("training log is populated and window shrinks over time") {
  Dataset data = generate(Task::kExp1d, 3000, 23);
  TrainConfig cfg = small_config(0.3, 400);
  cfg.warmup = 100;
  FrontierConfig fcfg;
  fcfg.family = Family::kNorm;
  fcfg.x_dim = 1;
  fcfg.d = 1;
  fcfg.center_hidden = {8};
  TrainResult res = train(data, fcfg, cfg);
  REQUIRE(res.region != nullptr);
  REQUIRE(res.log.size() >= 3);
  CHECK_FALSE(res.diverged);
  CHECK(res.log.front().phi >= res.log.back().phi);
  CHECK(res.log.back().val_coverage > 0.0);
  CHECK(res.best_val_adjusted_volume < std::numeric_limits<double>::infinity());
}

TEST_CASE("nll baseline produces a calibrated ellipsoid") {
  Dataset data = generate(Task::kGauss2d, 3000, 29);
  TrainConfig cfg = small_config(0.8, 600);
  BaselineResult res = gaussian_nll_baseline(data, 1, 2, cfg);
  REQUIRE(res.region != nullptr);
  CHECK(res.region->scale() == res.calibration.scale);
  CHECK(res.calibration.scale > 0.0);
  Dataset test = generate(Task::kGauss2d, 4000, 31);
  double cov = empirical_coverage(*res.region, test.x, test.y);
  CHECK(cov > 0.7);
  CHECK(cov < 0.9);
}
