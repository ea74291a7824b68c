#include "dpft/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "dpft/seed.hpp"

namespace dpft {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Sample synthesize_sample(std::uint64_t seed, const SceneConfig& config, const SensorRig& rig) {
  Sample s;
  s.scene = generate_scene(seed, config, rig);
  s.rig = rig;
  s.camera = render_camera(s.scene, rig, config);
  s.cube = render_radar(s.scene, rig, config);
  return s;
}

void write_png(const fs::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(2) != 3) throw InvalidInput("write_png expects [H, W, 3]");
  const int h = pixels.dim(0), w = pixels.dim(1);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w * 3; ++j) {
      const double v = std::clamp(pixels[static_cast<std::size_t>(i) * w * 3 + j], 0.0, 1.0);
      row[j] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  Tensor out({h, w, 3});
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (int j = 0; j < w * 3; ++j) out[static_cast<std::size_t>(i) * w * 3 + j] = row[j] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

json rig_to_json(const SensorRig& rig) {
  const auto& r = rig.radar;
  return {
      {"image_height", rig.image_height},
      {"image_width", rig.image_width},
      {"intrinsics", {{"fx", rig.intrinsics.fx}, {"fy", rig.intrinsics.fy}, {"cx", rig.intrinsics.cx}, {"cy", rig.intrinsics.cy}}},
      {"extrinsics", {{"rotation", rig.extrinsics.rotation}, {"translation", rig.extrinsics.translation}}},
      {"mount_height", rig.mount_height},
      {"radar",
       {{"fov_azimuth", r.fov_azimuth},
        {"fov_elevation", r.fov_elevation},
        {"range_max", r.range_max},
        {"range_bins", r.range_bins},
        {"azimuth_bins", r.azimuth_bins},
        {"elevation_bins", r.elevation_bins},
        {"doppler_bins", r.doppler_bins},
        {"doppler_max", r.doppler_max}}},
  };
}

SensorRig rig_from_json(const json& j) {
  SensorRig rig;
  rig.image_height = j.at("image_height");
  rig.image_width = j.at("image_width");
  const auto& k = j.at("intrinsics");
  rig.intrinsics = {k.at("fx"), k.at("fy"), k.at("cx"), k.at("cy")};
  rig.extrinsics.rotation = j.at("extrinsics").at("rotation").get<std::array<double, 9>>();
  rig.extrinsics.translation = j.at("extrinsics").at("translation").get<std::array<double, 3>>();
  rig.mount_height = j.at("mount_height");
  const auto& r = j.at("radar");
  rig.radar.fov_azimuth = r.at("fov_azimuth");
  rig.radar.fov_elevation = r.at("fov_elevation");
  rig.radar.range_max = r.at("range_max");
  rig.radar.range_bins = r.at("range_bins");
  rig.radar.azimuth_bins = r.at("azimuth_bins");
  rig.radar.elevation_bins = r.at("elevation_bins");
  rig.radar.doppler_bins = r.at("doppler_bins");
  rig.radar.doppler_max = r.at("doppler_max");
  return rig;
}

json box_to_json(const Box3D& b) {
  return {{"center", b.center}, {"size", b.size}, {"heading", b.heading}, {"class", b.class_id}, {"score", b.score}};
}

Box3D box_from_json(const json& j) {
  Box3D b;
  b.center = j.at("center").get<std::array<double, 3>>();
  b.size = j.at("size").get<std::array<double, 3>>();
  b.heading = j.at("heading");
  b.class_id = j.at("class");
  b.score = j.value("score", 1.0);
  return b;
}

json scene_to_json(const Scene& scene, const std::vector<ObjectClass>& classes) {
  json objects = json::array();
  for (const auto& o : scene.objects) {
    json jo = box_to_json(o.box);
    jo.erase("score");
    jo["class_name"] = classes.at(o.box.class_id).name;
    jo["radial_velocity"] = o.radial_velocity;
    jo["condition_tag"] = to_string(scene.condition);
    jo["daytime_tag"] = to_string(scene.daytime);
    objects.push_back(std::move(jo));
  }
  return {{"seed", scene.seed},
          {"condition_tag", to_string(scene.condition)},
          {"daytime_tag", to_string(scene.daytime)},
          {"objects", std::move(objects)}};
}

Scene scene_from_json(const json& j) {
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.condition = parse_condition(j.at("condition_tag"));
  s.daytime = parse_daytime(j.at("daytime_tag"));
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.box = box_from_json(jo);
    o.radial_velocity = jo.value("radial_velocity", 0.0);
    s.objects.push_back(o);
  }
  return s;
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
}

void write_sample(const fs::path& dir, const Sample& sample, const std::vector<ObjectClass>& classes) {
  fs::create_directories(dir);
  write_cube(dir / "cube.bin", sample.cube);
  write_png(dir / "image.png", sample.camera.pixels);
  write_json(dir / "boxes.json", scene_to_json(sample.scene, classes));
  write_json(dir / "rig.json", rig_to_json(sample.rig));
}

Sample read_sample(const fs::path& dir) {
  Sample s;
  s.id = dir.filename().string();
  s.scene = scene_from_json(read_json(dir / "boxes.json"));
  s.rig = rig_from_json(read_json(dir / "rig.json"));
  s.cube = read_cube(dir / "cube.bin");
  s.camera.pixels = read_png(dir / "image.png");
  s.camera.intrinsics = s.rig.intrinsics;
  s.camera.extrinsics = s.rig.extrinsics;
  return s;
}

std::vector<fs::path> list_sample_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0)
      dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<Sample> read_dataset(const fs::path& root) {
  std::vector<Sample> out;
  for (const auto& d : list_sample_dirs(root)) out.push_back(read_sample(d));
  return out;
}

}  // namespace dpft
