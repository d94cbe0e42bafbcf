// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protoocc/tensor.hpp"

namespace protoocc::scene {

using Vec3 = std::array<double, 3>;

struct WorldBounds {
  Vec3 min{0, 0, 0};
  Vec3 max{1, 1, 1};
};

enum class PrimitiveType { box, sphere };

/// Axis-aligned box (half extents per axis) or sphere (radius in half_extent[0]).
struct Primitive {
  PrimitiveType type = PrimitiveType::box;
  std::uint8_t label = 1;
  Vec3 center{};
  Vec3 half_extent{};

  bool contains(const Vec3& p) const;
};

struct SceneConfig {
  std::size_t H = 32, W = 32, Z = 8;
  std::size_t num_classes = 5;  // L, including free (label 0)
  double voxel_size = 1.0;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  bool allow_empty = false;
  double sphere_probability = 0.3;
  double box_min = 4.0, box_max = 10.0;          // horizontal edge length, voxels
  double box_height_min = 2.0, box_height_max = 6.0;
  double sphere_radius_min = 2.0, sphere_radius_max = 3.5;
  bool distinct_classes = true;
  std::size_t max_retries = 200;

  /// Grid centred on the origin in x/y, resting on z = 0.
  WorldBounds bounds() const;
  void validate() const;
};

/// Semantic labels on an H x W x Z grid, row-major with z fastest.
struct OccupancyGrid {
  std::size_t H = 0, W = 0, Z = 0;
  std::vector<std::uint8_t> labels;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * W + y) * Z + z; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }
  std::size_t cells() const { return labels.size(); }
};

struct SceneSample {
  OccupancyGrid occupancy;
  std::vector<Primitive> objects;
  /// Per voxel: 0 for free, otherwise 1 + index into `objects`.
  std::vector<std::uint16_t> instance;
  std::size_t num_classes = 0;
  double voxel_size = 1.0;
  WorldBounds bounds;
  std::uint64_t seed = 0;
};

SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

/// Rebuilds occupancy and instance grids from an object list. Throws
/// GenerationError if two objects claim the same voxel.
SceneSample rasterize(const SceneConfig& cfg, std::vector<Primitive> objects, std::uint64_t seed);

Vec3 voxel_center(const WorldBounds& bounds, const std::array<std::size_t, 3>& extents,
                  const std::array<std::size_t, 3>& cell);

}  // namespace protoocc::scene
