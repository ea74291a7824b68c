#pragma once

// On-disk scene layout:
//   <root>/manifest.json
//   <root>/scene_NNNNN/{cube.bin, image.png, boxes.json, rig.json}

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpft/synthetic.hpp"

namespace dpft {

struct Sample {
  std::string id;
  Scene scene;
  SensorRig rig;
  CameraFrame camera;
  RadarCube cube;
};

Sample synthesize_sample(std::uint64_t seed, const SceneConfig& config, const SensorRig& rig);

void write_png(const std::filesystem::path& path, const Tensor& pixels);
Tensor read_png(const std::filesystem::path& path);

nlohmann::json rig_to_json(const SensorRig& rig);
SensorRig rig_from_json(const nlohmann::json& j);
nlohmann::json box_to_json(const Box3D& box);
Box3D box_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const Scene& scene, const std::vector<ObjectClass>& classes);
Scene scene_from_json(const nlohmann::json& j);

void write_sample(const std::filesystem::path& dir, const Sample& sample,
                  const std::vector<ObjectClass>& classes);
Sample read_sample(const std::filesystem::path& dir);

std::vector<std::filesystem::path> list_sample_dirs(const std::filesystem::path& root);
std::vector<Sample> read_dataset(const std::filesystem::path& root);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace dpft
