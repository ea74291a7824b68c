#include "dpft/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dpft {

std::string to_string(SensorFailure f) {
  switch (f) {
    case SensorFailure::none: return "none";
    case SensorFailure::camera: return "camera";
    case SensorFailure::radar: return "radar";
  }
  return "none";
}

SensorFailure parse_failure(const std::string& s) {
  if (s == "none") return SensorFailure::none;
  if (s == "camera") return SensorFailure::camera;
  if (s == "radar") return SensorFailure::radar;
  throw std::invalid_argument("unknown modality '" + s + "' (expected none, camera or radar)");
}

Sample simulate_sensor_failure(const Sample& sample, SensorFailure failure) {
  Sample out = sample;
  if (failure == SensorFailure::camera) out.camera.pixels.fill(0.0);
  if (failure == SensorFailure::radar) out.cube.power.fill(0.0);
  return out;
}

std::string to_string(BoxMode m) { return m == BoxMode::bev ? "bev" : "3d"; }

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall, int points) {
  if (precision.size() != recall.size()) throw std::invalid_argument("interpolated_ap: curve size mismatch");
  // Running max of precision from the tail gives the interpolated envelope.
  std::vector<double> envelope(precision.size());
  double best = 0.0;
  for (std::size_t i = precision.size(); i-- > 0;) {
    best = std::max(best, precision[i]);
    envelope[i] = best;
  }
  double sum = 0.0;
  std::size_t k = 0;
  for (int i = 1; i <= points; ++i) {
    const double r = static_cast<double>(i) / points;
    while (k < recall.size() && recall[k] < r - 1e-12) ++k;
    if (k < recall.size()) sum += envelope[k];
  }
  return sum / points;
}

std::optional<double> average_precision(const std::vector<FrameBoxes>& frames, double iou_threshold,
                                        BoxMode mode) {
  struct Det {
    double score;
    std::size_t frame;
    std::size_t index;
  };
  std::vector<Det> dets;
  int positives = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    for (std::size_t i = 0; i < fr.detections.size(); ++i) dets.push_back({fr.detections[i].score, f, i});
    for (std::size_t g = 0; g < fr.gts.size(); ++g)
      if (fr.gt_ignore.empty() || !fr.gt_ignore[g]) ++positives;
  }
  if (positives == 0) return std::nullopt;
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

  std::vector<std::vector<char>> taken(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(frames[f].gts.size(), 0);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& d : dets) {
    const auto& fr = frames[d.frame];
    const Box3D& box = fr.detections[d.index];
    int best = -1;
    double best_iou = iou_threshold;
    bool hits_ignored = false;
    for (std::size_t g = 0; g < fr.gts.size(); ++g) {
      if (taken[d.frame][g]) continue;
      const double iou = box_iou(box, fr.gts[g], mode);
      if (iou < iou_threshold) continue;
      const bool ignored = !fr.gt_ignore.empty() && fr.gt_ignore[g];
      if (ignored) {
        hits_ignored = true;
      } else if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[d.frame][best] = 1;
      ++tp;
    } else if (hits_ignored || (!fr.det_ignore.empty() && fr.det_ignore[d.index])) {
      continue;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / positives);
  }
  return interpolated_ap(precision, recall);
}

std::optional<double> average_precision(const DetectionSet& dets, const std::vector<Box3D>& gts,
                                        double iou_threshold, BoxMode mode) {
  return average_precision(std::vector<FrameBoxes>{{dets, gts, {}, {}}}, iou_threshold, mode);
}

std::optional<double> weighted_map(const std::vector<std::optional<double>>& ap, const std::vector<int>& gt_counts) {
  if (ap.size() != gt_counts.size()) throw std::invalid_argument("weighted_map: size mismatch");
  double num = 0.0;
  int den = 0;
  for (std::size_t c = 0; c < ap.size(); ++c) {
    if (gt_counts[c] <= 0 || !ap[c]) continue;
    num += *ap[c] * gt_counts[c];
    den += gt_counts[c];
  }
  if (den == 0) return std::nullopt;
  return num / den;
}

std::string RangeBin::label() const {
  std::ostringstream os;
  os << "range_" << lo << "_" << hi;
  return os.str();
}

std::vector<RangeBin> default_range_bins() {
  return {{0, 10, false}, {10, 30, false}, {30, 50, false}, {50, 72, true}};
}

std::optional<double> SliceMetrics::mean_ap(BoxMode mode, std::size_t threshold_index) const {
  const std::size_t m = mode == BoxMode::three_d ? 0 : 1;
  return map[m].at(threshold_index);
}

namespace {

std::size_t threshold_index(const EvalConfig& config, double threshold) {
  for (std::size_t i = 0; i < config.thresholds.size(); ++i)
    if (std::abs(config.thresholds[i] - threshold) < 1e-9) return i;
  throw std::invalid_argument("threshold not evaluated: " + std::to_string(threshold));
}

// `gt_filter` selects counted GTs; `det_filter` drops unmatched detections.
template <typename GtFilter, typename DetFilter>
SliceMetrics compute_slice(const std::string& name, const std::vector<const FrameResult*>& frames,
                           const EvalConfig& config, GtFilter gt_filter, DetFilter det_filter) {
  const int nc = static_cast<int>(config.class_names.size());
  SliceMetrics s;
  s.name = name;
  s.frames = static_cast<int>(frames.size());
  s.gt_per_class.assign(nc, 0);
  for (const auto* f : frames)
    for (const auto& g : f->gts)
      if (gt_filter(g) && g.class_id >= 0 && g.class_id < nc) ++s.gt_per_class[g.class_id];
  s.gt_count = std::accumulate(s.gt_per_class.begin(), s.gt_per_class.end(), 0);

  std::vector<std::vector<FrameBoxes>> per_class(nc);
  for (int c = 0; c < nc; ++c) {
    for (const auto* f : frames) {
      FrameBoxes fb;
      for (const auto& d : f->detections) {
        if (d.class_id != c) continue;
        fb.detections.push_back(d);
        fb.det_ignore.push_back(det_filter(d) ? 0 : 1);
      }
      for (const auto& g : f->gts) {
        if (g.class_id != c) continue;
        fb.gts.push_back(g);
        fb.gt_ignore.push_back(gt_filter(g) ? 0 : 1);
      }
      per_class[c].push_back(std::move(fb));
    }
  }
  for (std::size_t m = 0; m < kBoxModes.size(); ++m) {
    s.ap[m].resize(config.thresholds.size());
    s.map[m].resize(config.thresholds.size());
    for (std::size_t t = 0; t < config.thresholds.size(); ++t) {
      for (int c = 0; c < nc; ++c)
        s.ap[m][t].push_back(average_precision(per_class[c], config.thresholds[t], kBoxModes[m]));
      s.map[m][t] = weighted_map(s.ap[m][t], s.gt_per_class);
    }
  }
  return s;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json slice_json(const SliceMetrics& s, const EvalConfig& config) {
  nlohmann::json j;
  j["frames"] = s.frames;
  j["gt_count"] = s.gt_count;
  for (std::size_t c = 0; c < config.class_names.size(); ++c) j["gt_per_class"][config.class_names[c]] = s.gt_per_class[c];
  for (std::size_t m = 0; m < kBoxModes.size(); ++m) {
    const std::string mode = to_string(kBoxModes[m]);
    for (std::size_t t = 0; t < config.thresholds.size(); ++t) {
      std::ostringstream key;
      key << config.thresholds[t];
      nlohmann::json entry;
      for (std::size_t c = 0; c < config.class_names.size(); ++c)
        entry["ap"][config.class_names[c]] = optional_json(s.ap[m][t][c]);
      entry["map"] = optional_json(s.map[m][t]);
      j["metrics"][mode][key.str()] = entry;
    }
  }
  return j;
}

}  // namespace

std::optional<double> EvalReport::total_map(BoxMode mode, double threshold) const {
  return total.mean_ap(mode, threshold_index(config, threshold));
}

const SliceMetrics* EvalReport::find(const std::string& name) const {
  if (total.name == name) return &total;
  for (const auto* family : {&conditions, &daytimes, &ranges})
    for (const auto& s : *family)
      if (s.name == name) return &s;
  return nullptr;
}

EvalReport aggregate_report(const std::vector<FrameResult>& frames, const EvalConfig& config) {
  EvalReport report;
  report.config = config;
  report.frames = static_cast<int>(frames.size());
  std::vector<const FrameResult*> all;
  for (const auto& f : frames) all.push_back(&f);
  auto any = [](const Box3D&) { return true; };
  report.total = compute_slice("total", all, config, any, any);

  for (Condition c : kAllConditions) {
    std::vector<const FrameResult*> subset;
    for (const auto* f : all)
      if (f->condition == c) subset.push_back(f);
    report.conditions.push_back(compute_slice(to_string(c), subset, config, any, any));
  }
  for (Daytime d : {Daytime::day, Daytime::night}) {
    std::vector<const FrameResult*> subset;
    for (const auto* f : all)
      if (f->daytime == d) subset.push_back(f);
    report.daytimes.push_back(compute_slice(to_string(d), subset, config, any, any));
  }
  for (const auto& bin : config.range_bins) {
    auto in_bin = [&bin](const Box3D& b) { return bin.contains(b.range()); };
    report.ranges.push_back(compute_slice(bin.label(), all, config, in_bin, in_bin));
  }
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["frames"] = report.frames;
  j["classes"] = report.config.class_names;
  j["thresholds"] = report.config.thresholds;
  j["box_modes"] = {"3d", "bev"};
  j["total"] = slice_json(report.total, report.config);
  for (const auto& s : report.conditions) j["conditions"][s.name] = slice_json(s, report.config);
  for (const auto& s : report.daytimes) j["daytime"][s.name] = slice_json(s, report.config);
  for (const auto& s : report.ranges) j["ranges"][s.name] = slice_json(s, report.config);
  return j;
}

std::string report_to_csv(const EvalReport& report, const std::string& label, double threshold) {
  const std::size_t t = threshold_index(report.config, threshold);
  std::ostringstream os;
  os << "model";
  for (const auto& s : report.conditions) os << ',' << s.name;
  os << ",total\n" << label;
  auto cell = [&os](const std::optional<double>& v) {
    os << ',';
    if (v) os << std::fixed << std::setprecision(2) << 100.0 * *v;
  };
  for (const auto& s : report.conditions) cell(s.mean_ap(BoxMode::three_d, t));
  cell(report.total.mean_ap(BoxMode::three_d, t));
  os << '\n';
  return os.str();
}

std::vector<FrameResult> run_inference(const DpftModel& model, const std::vector<Sample>& samples,
                                       const InferenceOptions& options) {
  std::vector<FrameResult> out(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  auto run = [&](std::size_t i) {
    try {
      const Sample input = simulate_sensor_failure(samples[i], options.failure);
      const ModelInput mi = prepare_input(input, options.prep);
      FrameResult fr;
      fr.id = samples[i].id;
      for (const auto& b : model.detect(mi))
        if (b.score >= options.min_score) fr.detections.push_back(b);
      fr.gts = samples[i].scene.boxes();
      fr.condition = samples[i].scene.condition;
      fr.daytime = samples[i].scene.daytime;
      out[i] = std::move(fr);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min<int>(options.threads, static_cast<int>(samples.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < samples.size(); i += workers) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dpft
