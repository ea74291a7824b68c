#pragma once

// Implementations behind the command-line verbs. Each returns a JSON summary
// that the front end prints; failures are reported by exception.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpft/config.hpp"

namespace dpft {

// Precondition failures a user can fix (existing output, rig mismatch, ...).
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDataRootEnv = "DPFT_DATA_ROOT";

// Condition for every scene index: per-condition quotas from the weights
// (largest remainder), then a seeded shuffle of the slots.
std::vector<Condition> condition_schedule(int count, const std::array<double, 7>& weights, std::uint64_t seed);

struct GenerateOptions {
  std::filesystem::path out;
  int count = 0;
  std::uint64_t seed = 0;
  bool force = false;
};
nlohmann::json generate_dataset(const RunConfig& config, const GenerateOptions& options);

// "C", "R", "RA", "AE", "C+RA", "C+AE", "C+R" (case-insensitive).
std::vector<SourceId> parse_modalities(const std::string& spec);

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
};
nlohmann::json run_training(const RunConfig& config, const TrainOptions& options);

// Model + preprocessing restored from a checkpoint.
struct LoadedModel {
  std::unique_ptr<DpftModel> model;
  PrepConfig prep;
  nlohmann::json rig;
  Checkpoint checkpoint;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  SensorFailure failure = SensorFailure::none;
  std::string label = "model";
};
nlohmann::json run_evaluation(const RunConfig& config, const EvalOptions& options);

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;  // dataset root or a single scene directory
  std::filesystem::path out;
  double min_score = 0.05;
};
nlohmann::json run_inference_command(const RunConfig& config, const InferOptions& options);

struct BenchmarkOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> scene;
  int runs = 100;
  int warmup = 5;
};
nlohmann::json run_benchmark(const RunConfig& config, const BenchmarkOptions& options);

// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace dpft
