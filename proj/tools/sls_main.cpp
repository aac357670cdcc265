#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sls/runconfig.hpp"

namespace {

int log_level() {
  const char* env = std::getenv("SLS_LOG");  // 0 = quiet, 1 = normal, 2 = verbose
  if (!env) return 1;
  return std::atoi(env);
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sls: minimum-volume conditional prediction regions"};
  app.require_subcommand(1);

  std::string task, out, config_path, model_path, data_path, points_path, x_str, grid_str;
  int n = 10000;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto* gen = app.add_subcommand("gen-data", "sample a synthetic dataset to CSV");
  gen->add_option("--task", task, "task name")->required();
  gen->add_option("--n", n, "number of samples");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out, "output csv path")->required();

  auto* train = app.add_subcommand("train", "train a region from a JSON config");
  train->add_option("--config", config_path, "config json path")->required();
  train
      ->add_option_function<std::uint64_t>(
          "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; }, "seed override")
      ->expected(1);
  train->add_option("--out", out, "output directory override");

  auto* cal = app.add_subcommand("calibrate", "recalibrate a model on a dataset CSV");
  cal->add_option("--model", model_path, "model file")->required();
  cal->add_option("--data", data_path, "calibration dataset csv")->required();
  cal->add_option("--out", out, "output model path")->required();

  auto* ev = app.add_subcommand("evaluate", "evaluate a model on a task or CSV");
  ev->add_option("--model", model_path, "model file")->required();
  ev->add_option("--data", data_path, "test dataset csv");
  ev->add_option("--task", task, "synthetic task to draw fresh test data from");
  ev->add_option("--n", n, "generated test size");
  ev->add_option("--seed", seed, "rng seed for generation/evaluation");
  ev->add_option("--out", out, "report json path")->required();

  auto* ls = app.add_subcommand("levelset", "score grid around one X for contour plots");
  ls->add_option("--model", model_path, "model file")->required();
  ls->add_option("--x", x_str, "feature values, comma separated")->required();
  ls->add_option("--grid", grid_str, "min,max,res per response dim, comma separated")
      ->required();
  ls->add_option("--out", out, "grid file path")->required();

  auto* pr = app.add_subcommand("predict", "membership and scores for points in a CSV");
  pr->add_option("--model", model_path, "model file")->required();
  pr->add_option("--points", points_path, "points csv (x*/y* columns)")->required();
  pr->add_option("--out", out, "output csv path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      sls::run_gen_data(task, n, seed, out);
      info("wrote " + out);
    } else if (train->parsed()) {
      sls::RunConfig cfg = sls::RunConfig::from_json_file(config_path);
      if (seed_set) cfg.seed = seed;
      if (!out.empty()) cfg.out_dir = out;
      sls::run_train(cfg);
      info("wrote model and logs under " + cfg.out_dir);
    } else if (cal->parsed()) {
      sls::run_calibrate(model_path, data_path, out);
      info("wrote " + out);
    } else if (ev->parsed()) {
      if (data_path.empty() == task.empty())
        throw std::runtime_error("evaluate: pass exactly one of --data or --task");
      sls::run_evaluate(model_path, data_path, task, n, seed, out);
      info("wrote " + out);
    } else if (ls->parsed()) {
      sls::run_levelset(model_path, parse_doubles(x_str), parse_doubles(grid_str), out);
      info("wrote " + out);
    } else if (pr->parsed()) {
      sls::run_predict(model_path, points_path, out);
      info("wrote " + out);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n' || c == '"') c = ' ';
    std::cerr << "{\"error\":\"" << msg << "\"}" << std::endl;
    return 1;
  }
  return 0;
}
