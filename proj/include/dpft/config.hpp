#pragma once

// Run configuration: one plain-text file of `key = value` lines.
//
//   # comment
//   model.num_queries = 400
//   train.lr = 0.0001
//   model.sensors = camera,radar_ra,radar_ae
//
// Unknown keys and malformed values are errors. Command-line overrides are
// applied after the file, so the precedence is defaults < file < flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpft/evaluation.hpp"
#include "dpft/training.hpp"

namespace dpft {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t seed = 0;

  std::string data_root = "data";
  std::string output_dir = "runs/default";
  int data_count = 100;

  SceneConfig scene;
  int image_height = 128;
  int image_width = 256;
  RadarSpec radar;

  PrepConfig prep;
  ModelConfig model;

  int epochs = 100;
  int batch_size = 4;
  AdamWConfig optimizer;
  double clip_norm = 10.0;
  bool auxiliary_loss = true;
  int threads = 0;
  int checkpoint_every = 0;
  double max_seconds = 0.0;

  std::vector<double> eval_thresholds{0.3, 0.5, 0.7};
  double min_score = 0.0;
  int benchmark_runs = 100;
  int benchmark_warmup = 5;

  // Derived views used by the commands.
  SensorRig rig() const;
  ModelConfig model_config() const;  // model with seed/fov filled in
  TrainConfig train_config() const;
  EvalConfig eval_config() const;

  // Throws ConfigError when a value is outside its documented range.
  void validate() const;
};

// Applies one `key = value` assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);
std::vector<std::string> config_keys();

RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string serialize_config(const RunConfig& config);

// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

}  // namespace dpft
