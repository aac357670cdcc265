#include "sls/runconfig.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sls/csvdata.hpp"
#include "sls/serialize.hpp"

namespace sls {

namespace {
using nlohmann::json;
namespace fs = std::filesystem;

void collect_unknown(const json& j, const std::set<std::string>& allowed,
                     const std::string& prefix, std::vector<std::string>& bad) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) bad.push_back(prefix + it.key());
}

std::string objective_tag(Objective o) {
  switch (o) {
    case Objective::kAuto:
      return "auto";
    case Objective::kVolume:
      return "volume";
    case Objective::kLogVolume:
      return "log-volume";
    case Objective::kThreshold:
      return "threshold";
  }
  throw std::logic_error("objective_tag");
}

Objective objective_from_tag(const std::string& t) {
  if (t == "auto") return Objective::kAuto;
  if (t == "volume") return Objective::kVolume;
  if (t == "log-volume") return Objective::kLogVolume;
  if (t == "threshold") return Objective::kThreshold;
  throw std::runtime_error("config: unknown objective '" + t + "'");
}

std::string family_tag(Family f) {
  switch (f) {
    case Family::kNorm:
      return "norm";
    case Family::kFlowMahalanobis:
      return "flow";
    case Family::kUnionOfFlows:
      return "union";
  }
  throw std::logic_error("family_tag");
}

std::string shape_tag(ShapeMode m) {
  return m == ShapeMode::kAuto ? "auto" : (m == ShapeMode::kFullRank ? "full" : "lowrank");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

json transform_to_json(const QuantileTransform& t) {
  json j;
  j["knots"] = t.knots();
  return j;
}

QuantileTransform transform_from_json(const json& j) {
  QuantileTransform t;
  t.set_knots(j.at("knots").get<std::vector<std::vector<double>>>());
  return t;
}

/// Transform sidecar lives next to the model; applied when present.
std::string transform_path_for(const std::string& model_path) {
  return (fs::path(model_path).parent_path() / "transform.json").string();
}

struct TransformPair {
  QuantileTransform x, y;
  bool active = false;
};

TransformPair load_transform_if_any(const std::string& model_path) {
  TransformPair tp;
  std::string path = transform_path_for(model_path);
  std::ifstream in(path);
  if (!in) return tp;
  json j = json::parse(in);
  tp.x = transform_from_json(j.at("x"));
  tp.y = transform_from_json(j.at("y"));
  tp.active = true;
  return tp;
}

Dataset apply_transform(const TransformPair& tp, const Dataset& d) {
  if (!tp.active) return d;
  return Dataset{tp.x.apply(d.x), tp.y.apply(d.y)};
}

Dataset load_dataset_for_model(const std::string& model_path, const std::string& data_path) {
  Dataset d = read_dataset_csv(data_path);
  return apply_transform(load_transform_if_any(model_path), d);
}
}  // namespace

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  std::vector<std::string> bad;
  collect_unknown(j,
                  {"task", "data_csv", "feature_columns", "target_columns",
                   "quantile_transform", "n_samples", "calibration_frac", "frontier", "train",
                   "eval", "n_test", "out_dir", "seed"},
                  "", bad);
  RunConfig c;
  if (j.contains("task") && !j.at("task").is_null())
    c.task = task_from_name(j.at("task").get<std::string>());
  c.data_csv = j.value("data_csv", c.data_csv);
  c.feature_columns = j.value("feature_columns", c.feature_columns);
  c.target_columns = j.value("target_columns", c.target_columns);
  c.quantile_transform = j.value("quantile_transform", c.quantile_transform);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.calibration_frac = j.value("calibration_frac", c.calibration_frac);
  c.n_test = j.value("n_test", c.n_test);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);

  if (j.contains("frontier")) {
    const json& f = j.at("frontier");
    collect_unknown(f,
                    {"family", "components", "identity_flow", "unit_det", "flow_layers",
                     "flow_hidden", "center_hidden", "shape_hidden", "mixture_hidden",
                     "use_layer_norm", "flow_dropout", "shape_mode"},
                    "frontier.", bad);
    if (f.contains("family")) {
      std::string t = f.at("family").get<std::string>();
      if (t == "norm")
        c.frontier.family = Family::kNorm;
      else if (t == "flow")
        c.frontier.family = Family::kFlowMahalanobis;
      else if (t == "union")
        c.frontier.family = Family::kUnionOfFlows;
      else
        throw std::runtime_error("config: unknown frontier family '" + t + "'");
    }
    c.frontier.components = f.value("components", c.frontier.components);
    c.frontier.identity_flow = f.value("identity_flow", c.frontier.identity_flow);
    c.frontier.unit_det = f.value("unit_det", c.frontier.unit_det);
    c.frontier.flow_layers = f.value("flow_layers", c.frontier.flow_layers);
    c.frontier.flow_hidden = f.value("flow_hidden", c.frontier.flow_hidden);
    c.frontier.center_hidden = f.value("center_hidden", c.frontier.center_hidden);
    c.frontier.shape_hidden = f.value("shape_hidden", c.frontier.shape_hidden);
    c.frontier.mixture_hidden = f.value("mixture_hidden", c.frontier.mixture_hidden);
    c.frontier.use_layer_norm = f.value("use_layer_norm", c.frontier.use_layer_norm);
    c.frontier.flow_dropout = f.value("flow_dropout", c.frontier.flow_dropout);
    if (f.contains("shape_mode")) {
      std::string m = f.at("shape_mode").get<std::string>();
      if (m == "auto")
        c.frontier.shape_mode = ShapeMode::kAuto;
      else if (m == "full")
        c.frontier.shape_mode = ShapeMode::kFullRank;
      else if (m == "lowrank")
        c.frontier.shape_mode = ShapeMode::kLowRankDiag;
      else
        throw std::runtime_error("config: unknown shape_mode '" + m + "'");
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    collect_unknown(t,
                    {"tau", "total_steps", "warmup", "batch_size", "lr_theta", "lr_omega",
                     "objective", "qnet_hidden", "qnet_layer_norm", "qnet_dropout",
                     "finetune_steps", "beta_init", "beta_max", "freeze_frac", "eval_every",
                     "val_frac"},
                    "train.", bad);
    c.train.tau = t.value("tau", c.train.tau);
    c.train.total_steps = t.value("total_steps", c.train.total_steps);
    c.train.warmup = t.value("warmup", c.train.warmup);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.theta_adam.learning_rate = t.value("lr_theta", c.train.theta_adam.learning_rate);
    c.train.omega_adam.learning_rate = t.value("lr_omega", c.train.omega_adam.learning_rate);
    if (t.contains("objective"))
      c.train.objective = objective_from_tag(t.at("objective").get<std::string>());
    c.train.qnet_hidden = t.value("qnet_hidden", c.train.qnet_hidden);
    c.train.qnet_layer_norm = t.value("qnet_layer_norm", c.train.qnet_layer_norm);
    c.train.qnet_dropout = t.value("qnet_dropout", c.train.qnet_dropout);
    c.train.finetune_steps = t.value("finetune_steps", c.train.finetune_steps);
    c.train.beta_init = t.value("beta_init", c.train.beta_init);
    c.train.beta_max = t.value("beta_max", c.train.beta_max);
    c.train.freeze_frac = t.value("freeze_frac", c.train.freeze_frac);
    c.train.eval_every = t.value("eval_every", c.train.eval_every);
    c.train.val_frac = t.value("val_frac", c.train.val_frac);
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    collect_unknown(e,
                    {"mc_box_points", "mc_volume_x", "cond_x", "cond_draws", "box_expand",
                     "bins"},
                    "eval.", bad);
    c.eval.mc_box_points = e.value("mc_box_points", c.eval.mc_box_points);
    c.eval.mc_volume_x = e.value("mc_volume_x", c.eval.mc_volume_x);
    c.eval.cond_x = e.value("cond_x", c.eval.cond_x);
    c.eval.cond_draws = e.value("cond_draws", c.eval.cond_draws);
    c.eval.box_expand = e.value("box_expand", c.eval.box_expand);
    c.eval.bins = e.value("bins", c.eval.bins);
  }

  if (!bad.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : bad) msg += " " + k;
    throw std::runtime_error(msg);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void RunConfig::validate() const {
  if (!task && data_csv.empty())
    throw std::runtime_error("config: need either task or data_csv");
  if (task && !data_csv.empty())
    throw std::runtime_error("config: task and data_csv are mutually exclusive");
  if (!data_csv.empty() && (feature_columns.empty() || target_columns.empty()))
    throw std::runtime_error("config: data_csv needs feature_columns and target_columns");
  if (n_samples < 10) throw std::runtime_error("config: n_samples too small");
  if (calibration_frac <= 0.0 || calibration_frac >= 1.0)
    throw std::runtime_error("config: calibration_frac in (0,1)");
  train.validate();
}

std::string RunConfig::resolved_json() const {
  json j;
  j["task"] = task ? json(task_name(*task)) : json(nullptr);
  j["data_csv"] = data_csv;
  j["feature_columns"] = feature_columns;
  j["target_columns"] = target_columns;
  j["quantile_transform"] = quantile_transform;
  j["n_samples"] = n_samples;
  j["calibration_frac"] = calibration_frac;
  j["n_test"] = n_test;
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  j["frontier"] = {{"family", family_tag(frontier.family)},
                   {"components", frontier.components},
                   {"identity_flow", frontier.identity_flow},
                   {"unit_det", frontier.unit_det},
                   {"flow_layers", frontier.flow_layers},
                   {"flow_hidden", frontier.flow_hidden},
                   {"center_hidden", frontier.center_hidden},
                   {"shape_hidden", frontier.shape_hidden},
                   {"mixture_hidden", frontier.mixture_hidden},
                   {"use_layer_norm", frontier.use_layer_norm},
                   {"flow_dropout", frontier.flow_dropout},
                   {"shape_mode", shape_tag(frontier.shape_mode)}};
  j["train"] = {{"tau", train.tau},
                {"total_steps", train.total_steps},
                {"warmup", train.warmup},
                {"batch_size", train.batch_size},
                {"lr_theta", train.theta_adam.learning_rate},
                {"lr_omega", train.omega_adam.learning_rate},
                {"objective", objective_tag(train.objective)},
                {"qnet_hidden", train.qnet_hidden},
                {"qnet_layer_norm", train.qnet_layer_norm},
                {"qnet_dropout", train.qnet_dropout},
                {"finetune_steps", train.finetune_steps},
                {"beta_init", train.beta_init},
                {"beta_max", train.beta_max},
                {"freeze_frac", train.freeze_frac},
                {"eval_every", train.eval_every},
                {"val_frac", train.val_frac}};
  j["eval"] = {{"mc_box_points", eval.mc_box_points}, {"mc_volume_x", eval.mc_volume_x},
               {"cond_x", eval.cond_x},               {"cond_draws", eval.cond_draws},
               {"box_expand", eval.box_expand},       {"bins", eval.bins}};
  return j.dump(2) + "\n";
}

std::string RunConfig::config_hash() const {
  std::uint64_t h = fnv1a(resolved_json());
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

void run_gen_data(const std::string& task_name_str, int n, std::uint64_t seed,
                  const std::string& out_path) {
  Task task = task_from_name(task_name_str);
  write_dataset_csv(out_path, generate(task, n, seed));
}

void run_train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  Dataset all;
  TransformPair tp;
  if (cfg.task) {
    all = generate(*cfg.task, cfg.n_samples, cfg.seed);
  } else {
    CsvTable table = read_csv(cfg.data_csv);
    all = dataset_from_table(table, resolve_columns(table, cfg.feature_columns),
                             resolve_columns(table, cfg.target_columns));
  }

  RngStream cal_rng(cfg.seed, "calibration-split");
  auto [train_data, cal_data] = split_dataset(all, 1.0 - cfg.calibration_frac, cal_rng);

  if (!cfg.task && cfg.quantile_transform) {
    tp.active = true;
    tp.x.fit(train_data.x);
    tp.y.fit(train_data.y);
    train_data = apply_transform(tp, train_data);
    cal_data = apply_transform(tp, cal_data);
    json jt;
    jt["x"] = transform_to_json(tp.x);
    jt["y"] = transform_to_json(tp.y);
    write_text((fs::path(cfg.out_dir) / "transform.json").string(), jt.dump() + "\n");
  }

  FrontierConfig fcfg = cfg.frontier;
  fcfg.x_dim = train_data.x.cols();
  fcfg.d = train_data.y.cols();
  TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;

  TrainResult result = train(train_data, fcfg, tcfg);
  if (result.diverged)
    throw std::runtime_error("training diverged; best checkpoint was at step " +
                             std::to_string(result.best_step));

  CalibrationResult cal =
      calibrate(*result.region, cal_data.x, cal_data.y, tcfg.tau);
  result.region->set_scale(cal.scale);

  ModelMetadata meta;
  meta.seed = cfg.seed;
  meta.config_hash = cfg.config_hash();
  save_model((fs::path(cfg.out_dir) / "model.bin").string(), *result.region, cal, meta);

  std::ostringstream log;
  for (const auto& e : result.log) {
    json rec = {{"step", e.step},
                {"theta_loss", std::isfinite(e.theta_loss) ? json(e.theta_loss) : json(nullptr)},
                {"in_window_frac", e.in_window_frac},
                {"phi", e.phi},
                {"psi", e.psi},
                {"beta", e.beta},
                {"val_coverage", e.val_coverage},
                {"val_adjusted_volume", e.val_adjusted_volume},
                {"checkpointed", e.checkpointed}};
    log << rec.dump() << "\n";
  }
  json tail = {{"empty_window_skips", result.empty_window_skips},
               {"best_step", result.best_step},
               {"best_val_adjusted_volume", result.best_val_adjusted_volume},
               {"calibration_scale", cal.scale},
               {"seed", cfg.seed},
               {"config_hash", meta.config_hash}};
  log << tail.dump() << "\n";
  write_text((fs::path(cfg.out_dir) / "train_log.jsonl").string(), log.str());
  write_text((fs::path(cfg.out_dir) / "resolved_config.json").string(), cfg.resolved_json());
}

void run_calibrate(const std::string& model_path, const std::string& data_path,
                   const std::string& out_path) {
  LoadedModel lm = load_model(model_path);
  Dataset d = load_dataset_for_model(model_path, data_path);
  lm.region->set_scale(1.0);
  CalibrationResult cal = calibrate(*lm.region, d.x, d.y, lm.region->tau());
  lm.region->set_scale(cal.scale);
  save_model(out_path, *lm.region, cal, lm.meta);
}

void run_evaluate(const std::string& model_path, const std::string& data_path,
                  const std::string& task_name_str, int n, std::uint64_t seed,
                  const std::string& out_path) {
  LoadedModel lm = load_model(model_path);
  Dataset test;
  std::optional<Task> task;
  if (!task_name_str.empty()) {
    task = task_from_name(task_name_str);
    test = generate(*task, n, seed);
  } else {
    test = load_dataset_for_model(model_path, data_path);
  }
  EvalConfig ecfg;
  ecfg.seed = seed;
  EvalReport rep = evaluate_region(*lm.region, test, task, ecfg);
  json j = {{"n_test", rep.n_test},
            {"coverage", rep.coverage},
            {"mean_volume", rep.mean_volume},
            {"mean_scaled_volume", rep.mean_scaled_volume},
            {"mc_mean_volume", rep.mc_mean_volume},
            {"mc_zero_hits", rep.mc_zero_hits},
            {"conditional_deviation", rep.conditional_deviation},
            {"conditional_method", rep.conditional_method},
            {"tau", lm.region->tau()},
            {"calibration_scale", lm.region->scale()},
            {"seed", lm.meta.seed},
            {"config_hash", lm.meta.config_hash},
            {"artifact_version", 1}};
  write_text(out_path, j.dump(2) + "\n");
}

void run_levelset(const std::string& model_path, const std::vector<double>& x,
                  const std::vector<double>& grid_spec, const std::string& out_path) {
  LoadedModel lm = load_model(model_path);
  int d = lm.region->frontier().d();
  if (static_cast<int>(grid_spec.size()) != 3 * d)
    throw std::runtime_error("levelset: grid spec needs min,max,res per response dim (" +
                             std::to_string(3 * d) + " numbers)");
  if (static_cast<int>(x.size()) != lm.region->frontier().x_dim())
    throw std::runtime_error("levelset: x has wrong dimension");

  std::vector<int> res(d);
  long total = 1;
  for (int j = 0; j < d; ++j) {
    res[j] = static_cast<int>(grid_spec[3 * j + 2]);
    if (res[j] < 2 || grid_spec[3 * j + 1] <= grid_spec[3 * j])
      throw std::runtime_error("levelset: bad grid range for dim " + std::to_string(j));
    total *= res[j];
  }
  Tensor ys(static_cast<int>(total), d);
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    for (int j = d - 1; j >= 0; --j) {
      long k = rem % res[j];
      rem /= res[j];
      double lo = grid_spec[3 * j], hi = grid_spec[3 * j + 1];
      ys(static_cast<int>(idx), j) = lo + (hi - lo) * k / (res[j] - 1);
    }
  }
  Tensor xs(static_cast<int>(total), static_cast<int>(x.size()));
  for (long i = 0; i < total; ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      xs(static_cast<int>(i), static_cast<int>(j)) = x[j];

  Tensor g = lm.region->scores(xs, ys);
  Tensor x1(1, static_cast<int>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) x1(0, static_cast<int>(j)) = x[j];
  double threshold = lm.region->thresholds(x1)(0, 0);

  std::ostringstream out;
  out.precision(17);
  out << "# dims " << d << "\n";
  for (int j = 0; j < d; ++j)
    out << "# y" << j << " " << grid_spec[3 * j] << " " << grid_spec[3 * j + 1] << " "
        << res[j] << "\n";
  out << "# threshold " << threshold << "\n";
  out << "# seed " << lm.meta.seed << " config_hash " << lm.meta.config_hash
      << " artifact_version 1\n";
  int per_row = d >= 2 ? res[d - 1] : 1;
  for (long i = 0; i < total; ++i) {
    out << g(static_cast<int>(i), 0);
    out << (((i + 1) % per_row == 0) ? "\n" : " ");
  }
  write_text(out_path, out.str());
}

void run_predict(const std::string& model_path, const std::string& points_path,
                 const std::string& out_path) {
  LoadedModel lm = load_model(model_path);
  Dataset d = load_dataset_for_model(model_path, points_path);
  Tensor g = lm.region->scores(d.x, d.y);
  Tensor t = lm.region->thresholds(d.x);
  CsvTable table;
  table.columns = {"score", "threshold", "member"};
  table.values = Tensor(d.n(), 3);
  for (int i = 0; i < d.n(); ++i) {
    table.values(i, 0) = g(i, 0);
    table.values(i, 1) = t(i, 0);
    table.values(i, 2) = g(i, 0) <= t(i, 0) ? 1.0 : 0.0;
  }
  write_csv(out_path, table);
}

}  // namespace sls
