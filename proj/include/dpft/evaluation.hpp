#pragma once

// Detection metrics: greedy score-ordered matching, 40-point interpolated AP,
// GT-weighted mAP and per-condition / daytime / range breakdowns.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dpft/dataset.hpp"
#include "dpft/iou.hpp"
#include "dpft/model.hpp"

namespace dpft {

enum class SensorFailure { none, camera, radar };
std::string to_string(SensorFailure f);
SensorFailure parse_failure(const std::string& s);

// Zeroes the failed modality's raw input (camera pixels or radar cube power).
Sample simulate_sensor_failure(const Sample& sample, SensorFailure failure);

// Boxes of one frame for a single AP computation. Ignored GTs neither count as
// positives nor turn matching detections into false positives; ignored
// detections are dropped unless they match a counted GT.
struct FrameBoxes {
  DetectionSet detections;
  std::vector<Box3D> gts;
  std::vector<char> gt_ignore;   // empty = none ignored
  std::vector<char> det_ignore;  // empty = none ignored
};

inline constexpr int kRecallPoints = 40;

// nullopt when there is no counted GT.
std::optional<double> average_precision(const std::vector<FrameBoxes>& frames, double iou_threshold,
                                        BoxMode mode);
std::optional<double> average_precision(const DetectionSet& dets, const std::vector<Box3D>& gts,
                                        double iou_threshold, BoxMode mode);

// Interpolated AP from a precision/recall curve ordered by descending score.
double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall,
                       int points = kRecallPoints);

// GT-count-weighted mean over classes that have GTs; nullopt if none do.
std::optional<double> weighted_map(const std::vector<std::optional<double>>& ap, const std::vector<int>& gt_counts);

struct RangeBin {
  double lo = 0.0;
  double hi = 0.0;
  bool include_hi = false;

  bool contains(double r) const { return r >= lo && (r < hi || (include_hi && r == hi)); }
  std::string label() const;
};

std::vector<RangeBin> default_range_bins();  // 0-10, 10-30, 30-50, 50-72 m

struct EvalConfig {
  std::vector<double> thresholds{0.3, 0.5, 0.7};
  std::vector<std::string> class_names{"sedan", "bus_or_truck"};
  std::vector<RangeBin> range_bins = default_range_bins();
};

struct FrameResult {
  std::string id;
  DetectionSet detections;
  std::vector<Box3D> gts;
  Condition condition = Condition::normal;
  Daytime daytime = Daytime::day;
};

inline constexpr std::array<BoxMode, 2> kBoxModes{BoxMode::three_d, BoxMode::bev};
std::string to_string(BoxMode m);

struct SliceMetrics {
  std::string name;
  int frames = 0;
  int gt_count = 0;
  std::vector<int> gt_per_class;
  // Indexed [mode][threshold][class], modes ordered as kBoxModes.
  std::array<std::vector<std::vector<std::optional<double>>>, 2> ap;
  std::array<std::vector<std::optional<double>>, 2> map;

  std::optional<double> mean_ap(BoxMode mode, std::size_t threshold_index) const;
};

struct EvalReport {
  EvalConfig config;
  int frames = 0;
  SliceMetrics total;
  std::vector<SliceMetrics> conditions;
  std::vector<SliceMetrics> daytimes;
  std::vector<SliceMetrics> ranges;

  // Total mAP for a mode and threshold (threshold must be one of config's).
  std::optional<double> total_map(BoxMode mode, double threshold) const;
  const SliceMetrics* find(const std::string& name) const;
};

EvalReport aggregate_report(const std::vector<FrameResult>& frames, const EvalConfig& config);

nlohmann::json report_to_json(const EvalReport& report);
// Header "model,<conditions...>,total"; one row of 3D mAP at the given
// threshold in percent, empty cells for absent slices.
std::string report_to_csv(const EvalReport& report, const std::string& label, double threshold = 0.3);

struct InferenceOptions {
  PrepConfig prep;
  SensorFailure failure = SensorFailure::none;
  double min_score = 0.0;
  int threads = 1;
};

std::vector<FrameResult> run_inference(const DpftModel& model, const std::vector<Sample>& samples,
                                       const InferenceOptions& options);

}  // namespace dpft
