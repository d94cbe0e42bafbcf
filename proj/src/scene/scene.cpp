// SPDX-License-Identifier: Apache-2.0
#include "protoocc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protoocc/errors.hpp"
#include "protoocc/rng.hpp"

namespace protoocc::scene {

bool Primitive::contains(const Vec3& p) const {
  if (type == PrimitiveType::sphere) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += (p[a] - center[a]) * (p[a] - center[a]);
    return s <= half_extent[0] * half_extent[0];
  }
  for (int a = 0; a < 3; ++a)
    if (std::abs(p[a] - center[a]) > half_extent[a]) return false;
  return true;
}

WorldBounds SceneConfig::bounds() const {
  const double hx = 0.5 * static_cast<double>(H) * voxel_size;
  const double hy = 0.5 * static_cast<double>(W) * voxel_size;
  return {{-hx, -hy, 0.0}, {hx, hy, static_cast<double>(Z) * voxel_size}};
}

void SceneConfig::validate() const {
  if (H < 8 || W < 8 || Z < 8) throw ParameterError("scene grid extents must be >= 8 per axis");
  if (num_classes < 2 || num_classes > 255) throw ParameterError("scene num_classes must lie in [2, 255]");
  if (!(voxel_size > 0)) throw ParameterError("scene voxel_size must be positive");
  if (min_objects > max_objects) throw ParameterError("scene min_objects exceeds max_objects");
  if (min_objects == 0 && !allow_empty) {
    throw ParameterError("scene min_objects = 0 requires allow_empty");
  }
  if (!(box_min > 0 && box_min <= box_max) || !(box_height_min > 0 && box_height_min <= box_height_max) ||
      !(sphere_radius_min > 0 && sphere_radius_min <= sphere_radius_max)) {
    throw ParameterError("scene primitive size ranges must be positive and ordered");
  }
  if (sphere_probability < 0 || sphere_probability > 1) {
    throw ParameterError("scene sphere_probability must lie in [0, 1]");
  }
}

Vec3 voxel_center(const WorldBounds& bounds, const std::array<std::size_t, 3>& extents,
                  const std::array<std::size_t, 3>& cell) {
  Vec3 c{};
  for (int a = 0; a < 3; ++a) {
    const double size = (bounds.max[a] - bounds.min[a]) / static_cast<double>(extents[a]);
    c[a] = bounds.min[a] + (static_cast<double>(cell[a]) + 0.5) * size;
  }
  return c;
}

namespace {

// Voxels whose centres fall inside the primitive.
std::vector<std::size_t> covered_cells(const SceneConfig& cfg, const WorldBounds& bounds,
                                       const Primitive& prim) {
  const std::array<std::size_t, 3> ext{cfg.H, cfg.W, cfg.Z};
  std::array<std::size_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    const double r = prim.type == PrimitiveType::sphere ? prim.half_extent[0] : prim.half_extent[a];
    const double l = (prim.center[a] - r - bounds.min[a]) / cfg.voxel_size - 0.5;
    const double h = (prim.center[a] + r - bounds.min[a]) / cfg.voxel_size - 0.5;
    lo[a] = static_cast<std::size_t>(std::clamp(std::ceil(l), 0.0, static_cast<double>(ext[a])));
    hi[a] = static_cast<std::size_t>(std::clamp(std::floor(h) + 1.0, 0.0, static_cast<double>(ext[a])));
  }
  std::vector<std::size_t> cells;
  for (std::size_t x = lo[0]; x < hi[0]; ++x)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t z = lo[2]; z < hi[2]; ++z)
        if (prim.contains(voxel_center(bounds, ext, {x, y, z}))) cells.push_back((x * cfg.W + y) * cfg.Z + z);
  return cells;
}

}  // namespace

SceneSample rasterize(const SceneConfig& cfg, std::vector<Primitive> objects, std::uint64_t seed) {
  SceneSample s;
  s.bounds = cfg.bounds();
  s.num_classes = cfg.num_classes;
  s.voxel_size = cfg.voxel_size;
  s.seed = seed;
  s.occupancy = {cfg.H, cfg.W, cfg.Z, std::vector<std::uint8_t>(cfg.H * cfg.W * cfg.Z, 0)};
  s.instance.assign(s.occupancy.cells(), 0);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    if (objects[k].label == 0 || objects[k].label >= cfg.num_classes) {
      throw GenerationError("object label out of range");
    }
    for (auto c : covered_cells(cfg, s.bounds, objects[k])) {
      if (s.instance[c] != 0) throw GenerationError("objects overlap");
      s.instance[c] = static_cast<std::uint16_t>(k + 1);
      s.occupancy.labels[c] = objects[k].label;
    }
  }
  s.objects = std::move(objects);
  return s;
}

SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng(seed).split("scene");
  const auto bounds = cfg.bounds();
  const auto count = cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);

  std::vector<std::uint8_t> classes(cfg.num_classes - 1);
  std::iota(classes.begin(), classes.end(), std::uint8_t{1});
  for (std::size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng.uniform_int(i)]);

  std::vector<std::uint16_t> taken(cfg.H * cfg.W * cfg.Z, 0);
  std::vector<Primitive> objects;
  for (std::size_t k = 0; k < count; ++k) {
    Primitive prim;
    prim.label = cfg.distinct_classes && k < classes.size()
                     ? classes[k]
                     : static_cast<std::uint8_t>(1 + rng.uniform_int(cfg.num_classes - 1));
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      prim.type = rng.uniform() < cfg.sphere_probability ? PrimitiveType::sphere : PrimitiveType::box;
      if (prim.type == PrimitiveType::sphere) {
        const double r = rng.uniform(cfg.sphere_radius_min, cfg.sphere_radius_max) * cfg.voxel_size;
        prim.half_extent = {r, r, r};
      } else {
        prim.half_extent = {0.5 * rng.uniform(cfg.box_min, cfg.box_max) * cfg.voxel_size,
                            0.5 * rng.uniform(cfg.box_min, cfg.box_max) * cfg.voxel_size,
                            0.5 * rng.uniform(cfg.box_height_min, cfg.box_height_max) * cfg.voxel_size};
      }
      for (int a = 0; a < 2; ++a) {
        const double lo = bounds.min[a] + prim.half_extent[a];
        const double hi = bounds.max[a] - prim.half_extent[a];
        prim.center[a] = lo < hi ? rng.uniform(lo, hi) : 0.5 * (bounds.min[a] + bounds.max[a]);
      }
      prim.center[2] = bounds.min[2] + prim.half_extent[2];

      const auto cells = covered_cells(cfg, bounds, prim);
      if (cells.empty()) continue;
      if (std::any_of(cells.begin(), cells.end(), [&](std::size_t c) { return taken[c] != 0; })) continue;
      for (auto c : cells) taken[c] = static_cast<std::uint16_t>(k + 1);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place object " + std::to_string(k) + " after " +
                            std::to_string(cfg.max_retries) + " attempts");
    }
    objects.push_back(prim);
  }
  return rasterize(cfg, std::move(objects), seed);
}

}  // namespace protoocc::scene
