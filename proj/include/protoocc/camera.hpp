// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "protoocc/scene.hpp"

namespace protoocc::scene {

/// Pinhole camera. Extrinsics map world to camera: p_c = R p_w + t, with the
/// camera looking along +z, x to the right and y down the image.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};
  std::size_t width = 1, height = 1;

  Vec3 to_camera(const Vec3& world) const;
  Vec3 from_camera(const Vec3& cam) const;
  Vec3 center() const;
  /// Pixel coordinates (u, v) and depth; nullopt for non-positive depth.
  std::optional<std::array<double, 3>> project(const Vec3& world) const;
  /// World point at camera depth `depth` seen at normalised coordinates (qx, qy).
  Vec3 unproject(double qx, double qy, double depth) const;
  void validate() const;
};

struct CameraRig {
  std::vector<Camera> cameras;
  void validate() const;
};

Camera look_at(const Vec3& eye, const Vec3& target, double hfov_deg, std::size_t width,
               std::size_t height);

/// Cameras evenly spaced in azimuth around the scene, elevated and aimed at its centre.
CameraRig make_default_rig(const SceneConfig& cfg, std::size_t num_cameras, std::size_t height,
                           std::size_t width, double hfov_deg = 90.0);

struct HitSlot {
  std::size_t query_index = 0;
  double qx = 0, qy = 0;  // normalised image coordinates in [0, 1]
  double depth = 0;
  bool valid = false;
};

/// Per view, a fixed-capacity list of voxel-query cells whose centres project
/// inside the image with positive depth.
struct HitSet {
  std::size_t capacity = 0;  // K
  std::vector<std::vector<HitSlot>> views;

  std::size_t num_views() const { return views.size(); }
  std::size_t valid_count(std::size_t view) const;
  std::vector<double> valid_mask(std::size_t view) const;
};

/// K = ceil(0.9 * h * w * z).
std::size_t default_hit_capacity(const std::array<std::size_t, 3>& query_extents);

HitSet project_voxels(const CameraRig& rig, const std::array<std::size_t, 3>& query_extents,
                      const WorldBounds& bounds, std::optional<std::size_t> capacity = {});

struct FeatureMaps {
  Tensor features;  // [N, d, h_f, w_f]
  double noise_sigma = 0;

  std::size_t views() const { return features.size(0); }
  std::size_t channels() const { return features.size(1); }
  std::size_t height() const { return features.size(2); }
  std::size_t width() const { return features.size(3); }
};

struct GroundTruthMasks {
  std::size_t height = 0, width = 0;
  /// Per view, row-major ids: 0 background, k + 1 for object k.
  std::vector<std::vector<std::int32_t>> ids;
};

struct RenderOptions {
  double embed_scale = 1.0;
  double max_depth = 64.0;
};

struct RenderResult {
  FeatureMaps features;
  GroundTruthMasks masks;
};

/// Ray-marches each pixel centre to the first occupied voxel. Channel c < L is
/// embed_scale * [label == c] (label 0 when nothing is hit), channel L is the
/// camera depth divided by max_depth (1 for misses), remaining channels are
/// zero; every channel then receives N(0, noise_sigma^2) noise.
RenderResult render_views(const SceneSample& scene, const CameraRig& rig, std::size_t d,
                          double noise_sigma, std::uint64_t seed, const RenderOptions& opts = {});

/// First occupied voxel along a ray, by 3D DDA traversal.
struct RayHit {
  std::array<std::size_t, 3> cell{};
  double t = 0;
};
std::optional<RayHit> march_ray(const SceneSample& scene, const Vec3& origin, const Vec3& dir);

}  // namespace protoocc::scene
