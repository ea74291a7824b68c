#pragma once

// Set-to-set supervision and the optimisation loop.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpft/model.hpp"

namespace dpft {

struct CostConfig {
  double class_weight = 1.0;
  double box_weight = 1.0;
  double range_max = 72.0;
  double size_scale = 10.0;
  // Use the focal-loss difference as class cost instead of -p.
  bool focal_cost = false;
  double alpha = 0.25;
  double gamma = 2.0;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth), sorted by prediction
  std::vector<int> unmatched_predictions;
};

class MatchingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Minimum-cost one-to-one assignment on a [predictions, gts] cost matrix.
// Every ground truth is assigned; requires rows >= cols.
MatchResult match_hungarian(const Tensor& cost);

// Normalised regression vector (x, y, z, l, w, h, sin, cos) of a box.
std::array<double, 8> box_vector(const Box3D& box, const CostConfig& config);
// Same vector as predicted by the head (decoded centre/size, tanh'd heading pair).
std::array<double, 8> predicted_box_vector(const RawHeadOutput& raw, const std::array<double, 3>& query_polar,
                                           const CostConfig& config);

// Cost of assigning prediction i to ground truth j.
Tensor matching_cost(const Tensor& raw, const Tensor& positions, const std::vector<Box3D>& gts, int num_classes,
                     const CostConfig& config);
MatchResult match_hungarian(const Tensor& raw, const Tensor& positions, const std::vector<Box3D>& gts,
                            int num_classes, const CostConfig& config);

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double clamp = 1e-7;
};

// Sum over entries of -a_t (1 - p_t)^g log p_t divided by `normalizer`.
// probs and targets share a shape; targets are 0/1.
double focal_loss(const Tensor& probs, const Tensor& targets, const FocalConfig& config = {},
                  double normalizer = 1.0);
// Same loss on raw logits with its analytic gradient.
ag::Var focal_loss(const ag::Var& logits, const Tensor& targets, const FocalConfig& config, double normalizer);

// Mean over pairs of the summed absolute difference of 8-vectors; 0 without pairs.
double l1_box_loss(const std::vector<std::array<double, 8>>& predicted,
                   const std::vector<std::array<double, 8>>& targets);
// Differentiable version on the raw head output for the matched pairs.
ag::Var l1_box_loss(const ag::Var& raw, const Tensor& positions, const MatchResult& match,
                    const std::vector<Box3D>& gts, const CostConfig& config);

struct LossBreakdown {
  double class_loss = 0.0;
  double box_loss = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double class_loss, double box_loss);

struct LossConfig {
  CostConfig cost;
  FocalConfig focal;
  bool auxiliary = true;  // supervise every refinement pass, weight 1 each
};

// Differentiable total plus its parts (summed over the supervised passes).
struct SampleLoss {
  ag::Var total;
  ag::Var class_loss;
  ag::Var box_loss;
  std::vector<MatchResult> matches;  // one per supervised pass
};

SampleLoss compute_loss(const std::vector<CycleOutput>& outputs, const std::vector<Box3D>& gts, int num_classes,
                        const LossConfig& config);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(const nn::ParamStore& store, const AdamWConfig& config);

  void step(nn::ParamStore& store, const std::vector<Tensor>& grads);

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Rescales grads in place so the global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

struct TrainingExample {
  std::string id;
  ModelInput input;
  std::vector<Box3D> targets;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  AdamWConfig optimizer;
  double clip_norm = 10.0;
  LossConfig loss;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
  bool shuffle = true;
  double max_seconds = 0.0;  // wall-clock budget, 0 = unlimited
  int checkpoint_every = 0;  // epochs between checkpoints, 0 = final only
  std::filesystem::path checkpoint_dir;
  nlohmann::json checkpoint_extra = nlohmann::json::object();  // copied into every checkpoint header
  std::filesystem::path metrics_path;  // JSON lines, one record per epoch
  std::filesystem::path step_log_path;  // JSON lines, one record per step
};

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  LossBreakdown mean;
  double seconds = 0.0;
};

struct TrainState {
  int epoch = 0;         // completed epochs
  std::int64_t step = 0; // completed optimizer steps
};

class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> epochs;
  bool stopped_on_time = false;
};

// Mean loss/gradients over one batch; samples run on separate threads and the
// gradients are reduced in batch order, so results do not depend on threading.
struct BatchResult {
  LossBreakdown loss;
  std::vector<Tensor> grads;
};
BatchResult batch_gradients(const DpftModel& model, const std::vector<const TrainingExample*>& batch,
                            const LossConfig& loss, std::uint64_t dropout_seed, int threads);

// Runs epochs state.epoch+1 .. config.epochs. Throws TrainingDivergence on a
// non-finite loss (after writing a diagnostic dump next to the checkpoints).
TrainResult train_loop(DpftModel& model, AdamW& optimizer, const std::vector<TrainingExample>& data,
                       const TrainConfig& config, TrainState state = {}, const TrainCallbacks& callbacks = {});

// Order of examples in an epoch.
std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle);

// ---- checkpoints ----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  nlohmann::json header;  // model config, rig, state, parameter table
  std::vector<Tensor> params;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::int64_t adam_steps = 0;
  TrainState state;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const DpftModel& model, const AdamW& optimizer,
                     const TrainState& state, const nlohmann::json& extra = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Copies weights (and optimizer state when given) into existing objects after
// checking the parameter table matches.
void restore_checkpoint(const Checkpoint& ckpt, DpftModel& model, AdamW* optimizer);

}  // namespace dpft
