#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sls/metrics.hpp"
#include "sls/synthetic.hpp"
#include "sls/training.hpp"

namespace sls {

/// One JSON configuration file drives a whole run: data source, frontier
/// family, training, calibration split, and evaluation settings. Unknown
/// keys are rejected (all offenders listed at once); the resolved form with
/// every default materialized is written next to the outputs.
struct RunConfig {
  std::optional<Task> task;
  std::string data_csv;
  std::vector<std::string> feature_columns, target_columns;
  bool quantile_transform = true;  // CSV sources only
  int n_samples = 20000;           // generated train+calibration size
  double calibration_frac = 0.2;   // held out before training
  FrontierConfig frontier;
  TrainConfig train;
  EvalConfig eval;
  int n_test = 10000;  // generated test size for task evaluation
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string resolved_json() const;
  std::string config_hash() const;  // FNV-1a of the resolved form, hex
  void validate() const;
};

std::uint64_t fnv1a(const std::string& text);

// Command implementations behind the CLI; all throw std::runtime_error with
// a one-line message on failure.
void run_gen_data(const std::string& task_name, int n, std::uint64_t seed,
                  const std::string& out_path);
/// Trains (and calibrates on the held-out slice), writing model.bin,
/// train_log.jsonl, resolved_config.json, and transform.json under out_dir.
void run_train(const RunConfig& cfg);
void run_calibrate(const std::string& model_path, const std::string& data_path,
                   const std::string& out_path);
void run_evaluate(const std::string& model_path, const std::string& data_path,
                  const std::string& task_name, int n, std::uint64_t seed,
                  const std::string& out_path);
void run_levelset(const std::string& model_path, const std::vector<double>& x,
                  const std::vector<double>& grid_spec, const std::string& out_path);
void run_predict(const std::string& model_path, const std::string& points_path,
                 const std::string& out_path);

}  // namespace sls
