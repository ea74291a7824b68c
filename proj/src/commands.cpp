#include "dpft/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "dpft/seed.hpp"

namespace dpft {

namespace fs = std::filesystem;

std::vector<Condition> condition_schedule(int count, const std::array<double, 7>& weights, std::uint64_t seed) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0)) throw ConfigError("condition weights must have a positive sum");
  std::array<int, 7> quota{};
  std::array<double, 7> remainder{};
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = count * weights[i] / total;
    quota[i] = static_cast<int>(std::floor(exact));
    remainder[i] = exact - quota[i];
    assigned += quota[i];
  }
  std::array<std::size_t, 7> idx{};
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++quota[idx[k % idx.size()]];

  std::vector<Condition> slots;
  for (std::size_t i = 0; i < weights.size(); ++i) slots.insert(slots.end(), quota[i], kAllConditions[i]);
  std::mt19937_64 rng(derive_seed(seed, SeedStream::scene, 0xC0D1ull));
  for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng() % i]);
  return slots;
}

nlohmann::json generate_dataset(const RunConfig& config, const GenerateOptions& options) {
  if (options.count < 0) throw ConfigError("count must be >= 0");
  if (fs::exists(options.out)) {
    if (!fs::is_directory(options.out)) throw CommandError(options.out.string() + " exists and is not a directory");
    if (!fs::is_empty(options.out)) {
      if (!options.force)
        throw CommandError("output directory " + options.out.string() + " is not empty (use --force to overwrite)");
      fs::remove_all(options.out);
    }
  }
  fs::create_directories(options.out);

  const SensorRig rig = config.rig();
  rig.validate();
  const auto schedule = condition_schedule(options.count, config.scene.condition_weights, options.seed);
  nlohmann::json manifest;
  manifest["count"] = options.count;
  manifest["seed"] = options.seed;
  manifest["rig"] = rig_to_json(rig);
  manifest["classes"] = nlohmann::json::array();
  for (const auto& c : config.scene.classes) manifest["classes"].push_back(c.name);
  nlohmann::json counts = nlohmann::json::object();
  for (Condition c : kAllConditions) counts[to_string(c)] = 0;
  nlohmann::json daytime_counts = {{"day", 0}, {"night", 0}};
  manifest["scenes"] = nlohmann::json::array();

  for (int i = 0; i < options.count; ++i) {
    SceneConfig sc = config.scene;
    sc.condition_weights.fill(0.0);
    for (std::size_t k = 0; k < kAllConditions.size(); ++k)
      if (kAllConditions[k] == schedule[i]) sc.condition_weights[k] = 1.0;
    const std::uint64_t scene_seed = derive_seed(options.seed, SeedStream::scene, static_cast<std::uint64_t>(i));
    Sample s = synthesize_sample(scene_seed, sc, rig);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    s.id = name;
    write_sample(options.out / name, s, config.scene.classes);
    counts[to_string(s.scene.condition)] = counts[to_string(s.scene.condition)].get<int>() + 1;
    daytime_counts[to_string(s.scene.daytime)] = daytime_counts[to_string(s.scene.daytime)].get<int>() + 1;
    manifest["scenes"].push_back({{"id", s.id},
                                  {"seed", scene_seed},
                                  {"condition", to_string(s.scene.condition)},
                                  {"daytime", to_string(s.scene.daytime)},
                                  {"objects", s.scene.objects.size()}});
  }
  manifest["condition_counts"] = counts;
  manifest["daytime_counts"] = daytime_counts;
  write_json(options.out / "manifest.json", manifest);
  return {{"out", options.out.string()}, {"count", options.count}, {"condition_counts", counts}};
}

std::vector<SourceId> parse_modalities(const std::string& spec) {
  std::string s;
  for (char c : spec) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "C") return {SourceId::camera};
  if (s == "R") return {SourceId::radar_ra, SourceId::radar_ae};
  if (s == "RA" || s == "R_RA") return {SourceId::radar_ra};
  if (s == "AE" || s == "R_AE") return {SourceId::radar_ae};
  if (s == "C+RA" || s == "C+R_RA") return {SourceId::camera, SourceId::radar_ra};
  if (s == "C+AE" || s == "C+R_AE") return {SourceId::camera, SourceId::radar_ae};
  if (s == "C+R") return {SourceId::camera, SourceId::radar_ra, SourceId::radar_ae};
  throw ConfigError("unknown modality set '" + spec + "' (expected C, R, RA, AE, C+RA, C+AE or C+R)");
}

namespace {

nlohmann::json prep_json(const PrepConfig& p) {
  return {{"trim_margin", p.trim_margin},
          {"trim_axis", static_cast<int>(p.trim_axis)},
          {"log_amplitude", p.log_amplitude},
          {"image_height", p.image_height}};
}

PrepConfig prep_from_json(const nlohmann::json& j) {
  PrepConfig p;
  p.trim_margin = j.at("trim_margin").get<int>();
  p.trim_axis = static_cast<CubeAxis>(j.at("trim_axis").get<int>());
  p.log_amplitude = j.at("log_amplitude").get<bool>();
  p.image_height = j.at("image_height").get<int>();
  return p;
}

std::vector<Sample> load_samples(const fs::path& root) {
  if (fs::exists(root / "rig.json") && fs::exists(root / "cube.bin")) return {read_sample(root)};
  if (!fs::is_directory(root)) throw CommandError("dataset directory not found: " + root.string());
  return read_dataset(root);
}

void check_rig(const nlohmann::json& expected, const std::vector<Sample>& samples, const std::string& what) {
  for (const auto& s : samples) {
    if (rig_to_json(s.rig) != expected)
      throw CommandError("sensor rig of " + s.id + " does not match the " + what);
  }
}

}  // namespace

nlohmann::json run_training(const RunConfig& config, const TrainOptions& options) {
  const auto samples = load_samples(options.data);
  if (samples.empty()) throw CommandError("no scenes found in " + options.data.string());

  std::unique_ptr<DpftModel> model;
  AdamW optimizer;
  TrainState state;
  nlohmann::json rig = rig_to_json(samples.front().rig);
  PrepConfig prep = config.prep;
  if (options.resume) {
    LoadedModel lm = load_model(*options.resume);
    model = std::move(lm.model);
    prep = lm.prep;
    if (lm.rig != rig) throw CommandError("dataset rig does not match checkpoint " + options.resume->string());
    optimizer = AdamW(model->params(), config.optimizer);
    restore_checkpoint(lm.checkpoint, *model, &optimizer);
    state = lm.checkpoint.state;
  } else {
    model = std::make_unique<DpftModel>(config.model_config());
    optimizer = AdamW(model->params(), config.optimizer);
  }
  check_rig(rig, samples, "first scene");

  std::vector<TrainingExample> data;
  data.reserve(samples.size());
  for (const auto& s : samples) data.push_back({s.id, prepare_input(s, prep), s.scene.boxes()});

  TrainConfig tc = config.train_config();
  tc.checkpoint_dir = options.out / "checkpoints";
  tc.metrics_path = options.out / "metrics.jsonl";
  tc.step_log_path = options.out / "steps.jsonl";
  fs::create_directories(options.out);
  {
    std::ofstream cfg(options.out / "config.cfg");
    cfg << serialize_config(config);
  }

  tc.checkpoint_extra = {{"rig", rig}, {"prep", prep_json(prep)}};
  TrainCallbacks callbacks;
  callbacks.on_epoch = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %d  loss %.5f  (class %.5f, box %.5f)  %.1fs\n", r.epoch, r.mean.total,
                 r.mean.class_loss, r.mean.box_loss, r.seconds);
  };
  const TrainResult result = train_loop(*model, optimizer, data, tc, state, callbacks);
  const fs::path last = tc.checkpoint_dir / "last.ckpt";

  nlohmann::json summary = {{"epochs_completed", result.state.epoch},
                            {"steps", result.state.step},
                            {"checkpoint", last.string()},
                            {"stopped_on_time", result.stopped_on_time}};
  if (!result.epochs.empty()) summary["final_loss"] = result.epochs.back().mean.total;
  return summary;
}

LoadedModel load_model(const fs::path& checkpoint) {
  LoadedModel lm;
  lm.checkpoint = read_checkpoint(checkpoint);
  const auto& h = lm.checkpoint.header;
  if (!h.contains("rig") || !h.contains("prep"))
    throw CheckpointError(checkpoint.string() + ": missing rig/preprocessing metadata (expected DPFTCKPT version " +
                          std::to_string(kCheckpointVersion) + " written by the train command)");
  lm.model = std::make_unique<DpftModel>(model_config_from_json(h.at("model")));
  restore_checkpoint(lm.checkpoint, *lm.model, nullptr);
  lm.prep = prep_from_json(h.at("prep"));
  lm.rig = h.at("rig");
  return lm;
}

nlohmann::json run_evaluation(const RunConfig& config, const EvalOptions& options) {
  LoadedModel lm = load_model(options.checkpoint);
  const auto samples = load_samples(options.data);
  check_rig(lm.rig, samples, "checkpoint rig");

  InferenceOptions io;
  io.prep = lm.prep;
  io.failure = options.failure;
  io.min_score = config.min_score;
  io.threads = std::max(1, config.threads);
  const auto frames = run_inference(*lm.model, samples, io);
  const EvalReport report = aggregate_report(frames, config.eval_config());

  fs::create_directories(options.out);
  nlohmann::json j = report_to_json(report);
  j["label"] = options.label;
  j["fail_modality"] = to_string(options.failure);
  nlohmann::json sensors = nlohmann::json::array();
  for (auto s : lm.model->config().sensors) sensors.push_back(to_string(s));
  j["sensors"] = sensors;
  write_json(options.out / "report.json", j);
  const double csv_threshold = config.eval_thresholds.front();
  std::ofstream(options.out / "report.csv") << report_to_csv(report, options.label, csv_threshold);

  nlohmann::json summary = {{"frames", report.frames}, {"report", (options.out / "report.json").string()}};
  for (std::size_t t = 0; t < report.config.thresholds.size(); ++t) {
    const auto v = report.total.mean_ap(BoxMode::three_d, t);
    std::ostringstream key;
    key << "map_3d@" << report.config.thresholds[t];
    summary[key.str()] = v ? nlohmann::json(*v) : nlohmann::json();
  }
  return summary;
}

nlohmann::json run_inference_command(const RunConfig& config, const InferOptions& options) {
  (void)config;
  LoadedModel lm = load_model(options.checkpoint);
  const auto samples = load_samples(options.data);
  check_rig(lm.rig, samples, "checkpoint rig");
  InferenceOptions io;
  io.prep = lm.prep;
  io.min_score = options.min_score;
  const auto frames = run_inference(*lm.model, samples, io);
  nlohmann::json out;
  out["frames"] = nlohmann::json::array();
  for (const auto& f : frames) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& b : f.detections) dets.push_back(box_to_json(b));
    out["frames"].push_back({{"id", f.id}, {"detections", dets}});
  }
  if (!options.out.empty()) {
    if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
    write_json(options.out, out);
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / values.size())};
}

nlohmann::json run_benchmark(const RunConfig& config, const BenchmarkOptions& options) {
  if (options.runs < 1) throw ConfigError("runs must be >= 1");
  std::unique_ptr<DpftModel> model;
  PrepConfig prep = config.prep;
  if (options.checkpoint) {
    LoadedModel lm = load_model(*options.checkpoint);
    model = std::move(lm.model);
    prep = lm.prep;
  } else {
    model = std::make_unique<DpftModel>(config.model_config());
  }
  Sample sample = options.scene ? read_sample(*options.scene)
                                : synthesize_sample(derive_seed(config.seed, SeedStream::scene), config.scene,
                                                    config.rig());
  const ModelInput input = prepare_input(sample, prep);
  for (int i = 0; i < options.warmup; ++i) model->detect(input);
  std::vector<double> ms;
  for (int i = 0; i < options.runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model->detect(input);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  const auto [mean, std] = mean_std(ms);
  return {{"runs", options.runs},
          {"warmup", options.warmup},
          {"mean_ms", mean},
          {"std_ms", std},
          {"parameters", model->params().numel()},
          {"num_queries", model->config().num_queries}};
}

}  // namespace dpft
