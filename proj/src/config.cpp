#include "dpft/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace dpft {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string s = trim(text);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

struct Binding {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Access>
Binding number(Access access) {
  return {[access](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_number<T>("", v); }};
}

template <typename Access>
Binding boolean(Access access) {
  return {[access](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { access(c) = parse_bool("", v); }};
}

template <typename Access>
Binding text(Access access) {
  return {[access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = trim(v); }};
}

template <std::size_t N, typename Access>
Binding int_triple(Access access) {
  return {[access](const RunConfig& c) {
            const auto& a = access(const_cast<RunConfig&>(c));
            std::string s;
            for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + fmt(a[i]);
            return s;
          },
          [access](RunConfig& c, const std::string& v) {
            const auto parts = split(v, ',');
            if (parts.size() != N) throw ConfigError("expected " + std::to_string(N) + " comma-separated values");
            auto& a = access(c);
            for (std::size_t i = 0; i < N; ++i) a[i] = parse_number<int>("", parts[i]);
          }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    t["seed"] = number<std::uint64_t>(FIELD(c.seed));
    t["paths.data_root"] = text(FIELD(c.data_root));
    t["paths.output_dir"] = text(FIELD(c.output_dir));
    t["data.count"] = number<int>(FIELD(c.data_count));

    t["scene.min_objects"] = number<int>(FIELD(c.scene.min_objects));
    t["scene.max_objects"] = number<int>(FIELD(c.scene.max_objects));
    t["scene.range_min"] = number<double>(FIELD(c.scene.range_min));
    t["scene.range_max"] = number<double>(FIELD(c.scene.range_max));
    t["scene.azimuth_margin"] = number<double>(FIELD(c.scene.azimuth_margin));
    t["scene.night_probability"] = number<double>(FIELD(c.scene.night_probability));
    t["scene.static_objects"] = boolean(FIELD(c.scene.static_objects));
    t["scene.max_pair_iou"] = number<double>(FIELD(c.scene.max_pair_iou));
    t["scene.radar_noise_floor"] = number<double>(FIELD(c.scene.radar_noise_floor));
    t["scene.weather_effects"] = boolean(FIELD(c.scene.weather_effects));
    t["scene.conditions"] = Binding{
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < kAllConditions.size(); ++i) {
            if (c.scene.condition_weights[i] == 0.0) continue;
            if (!s.empty()) s += ",";
            s += to_string(kAllConditions[i]) + ":" + fmt(c.scene.condition_weights[i]);
          }
          return s;
        },
        [](RunConfig& c, const std::string& v) {
          std::array<double, 7> w{};
          for (const auto& item : split(v, ',')) {
            const auto colon = item.find(':');
            const Condition cond = parse_condition(trim(item.substr(0, colon)));
            const double weight = colon == std::string::npos ? 1.0 : parse_number<double>("", item.substr(colon + 1));
            for (std::size_t i = 0; i < kAllConditions.size(); ++i)
              if (kAllConditions[i] == cond) w[i] = weight;
          }
          c.scene.condition_weights = w;
        }};

    t["rig.image_height"] = number<int>(FIELD(c.image_height));
    t["rig.image_width"] = number<int>(FIELD(c.image_width));
    t["rig.range_max"] = number<double>(FIELD(c.radar.range_max));
    t["rig.range_bins"] = number<int>(FIELD(c.radar.range_bins));
    t["rig.azimuth_bins"] = number<int>(FIELD(c.radar.azimuth_bins));
    t["rig.elevation_bins"] = number<int>(FIELD(c.radar.elevation_bins));
    t["rig.doppler_bins"] = number<int>(FIELD(c.radar.doppler_bins));
    t["rig.doppler_max"] = number<double>(FIELD(c.radar.doppler_max));
    t["rig.fov_azimuth_deg"] = Binding{
        [](const RunConfig& c) { return fmt(c.radar.fov_azimuth * 180.0 / M_PI); },
        [](RunConfig& c, const std::string& v) { c.radar.fov_azimuth = parse_number<double>("", v) * M_PI / 180.0; }};
    t["rig.fov_elevation_deg"] = Binding{
        [](const RunConfig& c) { return fmt(c.radar.fov_elevation * 180.0 / M_PI); },
        [](RunConfig& c, const std::string& v) {
          c.radar.fov_elevation = parse_number<double>("", v) * M_PI / 180.0;
        }};

    t["prep.trim_margin"] = number<int>(FIELD(c.prep.trim_margin));
    t["prep.image_height"] = number<int>(FIELD(c.prep.image_height));
    t["prep.log_amplitude"] = boolean(FIELD(c.prep.log_amplitude));

    t["model.sensors"] = Binding{
        [](const RunConfig& c) {
          std::string s;
          for (auto src : c.model.sensors) s += (s.empty() ? "" : ",") + to_string(src);
          return s;
        },
        [](RunConfig& c, const std::string& v) {
          c.model.sensors.clear();
          for (const auto& item : split(v, ',')) c.model.sensors.push_back(parse_source(item));
        }};
    t["model.dim"] = number<int>(FIELD(c.model.dim));
    t["model.num_queries"] = number<int>(FIELD(c.model.num_queries));
    t["model.heads"] = number<int>(FIELD(c.model.heads));
    t["model.points"] = number<int>(FIELD(c.model.points));
    t["model.ffn_hidden"] = number<int>(FIELD(c.model.ffn_hidden));
    t["model.dropout"] = number<double>(FIELD(c.model.dropout));
    t["model.cycles"] = number<int>(FIELD(c.model.cycles));
    t["model.raw_pool"] = number<int>(FIELD(c.model.raw_pool));
    t["model.camera_stem"] = number<int>(FIELD(c.model.camera_encoder.stem_channels));
    t["model.camera_channels"] = int_triple<3>(FIELD(c.model.camera_encoder.stage_channels));
    t["model.camera_blocks"] = int_triple<3>(FIELD(c.model.camera_encoder.blocks));
    t["model.radar_stem"] = number<int>(FIELD(c.model.radar_encoder.stem_channels));
    t["model.radar_channels"] = int_triple<3>(FIELD(c.model.radar_encoder.stage_channels));
    t["model.radar_blocks"] = int_triple<3>(FIELD(c.model.radar_encoder.blocks));

    t["train.epochs"] = number<int>(FIELD(c.epochs));
    t["train.batch_size"] = number<int>(FIELD(c.batch_size));
    t["train.lr"] = number<double>(FIELD(c.optimizer.lr));
    t["train.beta1"] = number<double>(FIELD(c.optimizer.beta1));
    t["train.beta2"] = number<double>(FIELD(c.optimizer.beta2));
    t["train.eps"] = number<double>(FIELD(c.optimizer.eps));
    t["train.weight_decay"] = number<double>(FIELD(c.optimizer.weight_decay));
    t["train.clip_norm"] = number<double>(FIELD(c.clip_norm));
    t["train.auxiliary_loss"] = boolean(FIELD(c.auxiliary_loss));
    t["train.threads"] = number<int>(FIELD(c.threads));
    t["train.checkpoint_every"] = number<int>(FIELD(c.checkpoint_every));
    t["train.max_seconds"] = number<double>(FIELD(c.max_seconds));

    t["eval.thresholds"] = Binding{
        [](const RunConfig& c) {
          std::string s;
          for (double v : c.eval_thresholds) s += (s.empty() ? "" : ",") + fmt(v);
          return s;
        },
        [](RunConfig& c, const std::string& v) {
          c.eval_thresholds.clear();
          for (const auto& item : split(v, ',')) c.eval_thresholds.push_back(parse_number<double>("", item));
        }};
    t["eval.min_score"] = number<double>(FIELD(c.min_score));
    t["benchmark.runs"] = number<int>(FIELD(c.benchmark_runs));
    t["benchmark.warmup"] = number<int>(FIELD(c.benchmark_warmup));
    return t;
  }();
  return table;
}

#undef FIELD

}  // namespace

SensorRig RunConfig::rig() const { return SensorRig::make_default(image_height, image_width, radar); }

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.seed = seed;
  m.num_classes = static_cast<int>(scene.classes.size());
  m.fov.range_max = radar.range_max;
  m.fov.fov_azimuth = radar.fov_azimuth;
  m.fov.fov_elevation = radar.fov_elevation;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.optimizer = optimizer;
  t.clip_norm = clip_norm;
  t.loss.auxiliary = auxiliary_loss;
  t.loss.cost.range_max = radar.range_max;
  t.seed = seed;
  t.threads = threads;
  t.max_seconds = max_seconds;
  t.checkpoint_every = checkpoint_every;
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.thresholds = eval_thresholds;
  e.class_names.clear();
  for (const auto& c : scene.classes) e.class_names.push_back(c.name);
  e.range_bins = default_range_bins();
  e.range_bins.back().hi = radar.range_max;
  return e;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(data_count >= 0, "data.count must be >= 0");
  require(scene.min_objects >= 0 && scene.max_objects >= scene.min_objects, "scene object counts");
  require(scene.range_min > 0 && scene.range_max > scene.range_min && scene.range_max <= radar.range_max,
          "scene range must satisfy 0 < range_min < range_max <= rig.range_max");
  require(scene.night_probability >= 0 && scene.night_probability <= 1, "scene.night_probability in [0, 1]");
  double wsum = 0.0;
  for (double w : scene.condition_weights) {
    require(w >= 0, "condition weights must be >= 0");
    wsum += w;
  }
  require(wsum > 0, "at least one condition weight must be positive");
  require(image_height >= 16 && image_width >= 16, "rig image size >= 16");
  require(prep.trim_margin >= 0 && radar.range_bins > 2 * prep.trim_margin, "rig.range_bins > 2 * trim_margin");
  require(prep.image_height >= 16, "prep.image_height >= 16");
  require(!model.sensors.empty(), "model.sensors must name at least one sensor");
  require(model.dim > 0 && model.heads > 0 && model.dim % model.heads == 0, "model.dim divisible by model.heads");
  require(model.dim % 4 == 0, "model.dim must be a multiple of 4");
  require(model.num_queries >= 1, "model.num_queries >= 1");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(model.num_queries))));
  require(side * side == model.num_queries, "model.num_queries must be a perfect square");
  require(model.points >= 1, "model.points >= 1");
  require(model.cycles >= 0, "model.cycles >= 0");
  require(model.dropout >= 0 && model.dropout < 1, "model.dropout in [0, 1)");
  require(model.raw_pool >= 1, "model.raw_pool >= 1");
  require(epochs >= 0, "train.epochs >= 0");
  require(batch_size >= 1, "train.batch_size >= 1");
  require(optimizer.lr > 0, "train.lr > 0");
  require(optimizer.weight_decay >= 0, "train.weight_decay >= 0");
  require(!eval_thresholds.empty(), "eval.thresholds must not be empty");
  for (double t : eval_thresholds) require(t > 0 && t <= 1, "eval thresholds in (0, 1]");
  require(benchmark_runs >= 1 && benchmark_warmup >= 0, "benchmark.runs >= 1");
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = bindings();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  const auto& table = bindings();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, b] : bindings()) keys.push_back(k);
  return keys;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, binding] : bindings()) out += key + " = " + binding.get(config) + "\n";
  return out;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' must look like key=value");
    set_config_value(config, trim(a.substr(0, eq)), a.substr(eq + 1));
  }
}

}  // namespace dpft
