// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>

#include "protoocc/errors.hpp"
#include "protoocc/model.hpp"

namespace protoocc::harness {

namespace fs = std::filesystem;

std::vector<scene::SceneFile> generate_scenes(const ExperimentConfig& cfg, std::size_t count, std::uint64_t seed) {
  cfg.validate();
  const auto rig = scene::make_default_rig(cfg.scene, cfg.cameras.count, cfg.cameras.image_height,
                                           cfg.cameras.image_width, cfg.cameras.hfov_deg);
  std::vector<scene::SceneFile> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back({scene::generate_scene(cfg.scene, seed + i), rig});
  return out;
}

void write_scene_dir(const fs::path& dir, std::span<const scene::SceneFile> scenes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create '" + dir.string() + "': " + ec.message());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.posc", i);
    scene::write_scene(dir / name, scenes[i].scene, scenes[i].rig);
  }
}

std::vector<scene::SceneFile> read_scene_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".posc") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .posc scenes in '" + dir.string() + "'");
  std::vector<scene::SceneFile> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(scene::read_scene(f));
  return out;
}

namespace {

void check_field(std::size_t got, std::size_t want, const char* field) {
  if (got != want)
    throw ConfigError("scene does not match config field '" + std::string(field) + "': scene has " +
                      std::to_string(got) + ", config has " + std::to_string(want));
}

}  // namespace

PreparedScene prepare_scene(const scene::SceneFile& file, const ExperimentConfig& cfg) {
  const auto& s = file.scene;
  check_field(s.occupancy.H, cfg.scene.H, "scene.H");
  check_field(s.occupancy.W, cfg.scene.W, "scene.W");
  check_field(s.occupancy.Z, cfg.scene.Z, "scene.Z");
  check_field(s.num_classes, cfg.scene.num_classes, "scene.num_classes");
  check_field(file.rig.cameras.size(), cfg.cameras.count, "cameras.count");
  for (const auto& cam : file.rig.cameras) {
    check_field(cam.height, cfg.cameras.image_height, "cameras.image_height");
    check_field(cam.width, cfg.cameras.image_width, "cameras.image_width");
  }

  NoGradGuard no_grad;
  const Rng stream(s.seed);
  PreparedScene out;
  scene::RenderOptions ropts;
  ropts.embed_scale = cfg.render.embed_scale;
  auto rendered = scene::render_views(s, file.rig, cfg.render.channels, cfg.render.noise_sigma,
                                      stream.split("render").next_u64(), ropts);
  out.features = std::move(rendered.features);
  out.hits = scene::project_voxels(file.rig, cfg.model.query, s.bounds);

  auto protos = clustering::init_prototypes(out.features.features, cfg.model.proto_ratio);
  protos = clustering::iterate_prototypes(out.features.features, protos, cfg.model.proto_iters, cfg.model.assign_tau);
  out.prototypes = protos.features;

  const auto gh = cfg.grid_h(), gw = cfg.grid_w();
  if (clustering::mask_generator_from_string(cfg.model.mask_generator) == clustering::MaskGenerator::ground_truth)
    out.masks = clustering::ground_truth_masks(rendered.masks, gh, gw, cfg.model.mask_target);
  else
    out.masks = clustering::grid_kmeans_masks(out.features.features, gh, gw, cfg.model.mask_target,
                                              stream.split("masks").next_u64());
  out.labels = s.occupancy.labels;
  return out;
}

std::vector<PreparedScene> prepare_scenes(std::span<const scene::SceneFile> files, const ExperimentConfig& cfg) {
  std::vector<PreparedScene> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(prepare_scene(f, cfg));
  return out;
}

}  // namespace protoocc::harness
