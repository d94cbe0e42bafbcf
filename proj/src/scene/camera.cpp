// SPDX-License-Identifier: Apache-2.0
#include "protoocc/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "protoocc/errors.hpp"
#include "protoocc/rng.hpp"

namespace protoocc::scene {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

Vec3 Camera::to_camera(const Vec3& w) const {
  const auto& r = rotation;
  return {r[0] * w[0] + r[1] * w[1] + r[2] * w[2] + translation[0],
          r[3] * w[0] + r[4] * w[1] + r[5] * w[2] + translation[1],
          r[6] * w[0] + r[7] * w[1] + r[8] * w[2] + translation[2]};
}

Vec3 Camera::from_camera(const Vec3& c) const {
  const auto& r = rotation;
  const Vec3 d{c[0] - translation[0], c[1] - translation[1], c[2] - translation[2]};
  return {r[0] * d[0] + r[3] * d[1] + r[6] * d[2], r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
          r[2] * d[0] + r[5] * d[1] + r[8] * d[2]};
}

Vec3 Camera::center() const { return from_camera({0, 0, 0}); }

std::optional<std::array<double, 3>> Camera::project(const Vec3& world) const {
  const auto c = to_camera(world);
  if (!(c[2] > 0.0)) return std::nullopt;
  return std::array<double, 3>{fx * c[0] / c[2] + cx, fy * c[1] / c[2] + cy, c[2]};
}

Vec3 Camera::unproject(double qx, double qy, double depth) const {
  const double u = qx * static_cast<double>(width);
  const double v = qy * static_cast<double>(height);
  return from_camera({(u - cx) / fx * depth, (v - cy) / fy * depth, depth});
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw ParameterError("camera intrinsics are degenerate (fx, fy must be positive)");
  }
  if (width == 0 || height == 0) throw ParameterError("camera image extent must be positive");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rotation[i * 3 + k] * rotation[j * 3 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-9) {
        throw ParameterError("camera rotation is not orthonormal");
      }
    }
}

void CameraRig::validate() const {
  if (cameras.empty()) throw ParameterError("camera rig has no cameras");
  for (const auto& c : cameras) {
    c.validate();
    if (c.width != cameras[0].width || c.height != cameras[0].height) {
      throw ParameterError("all cameras in a rig must share the image extent");
    }
  }
}

Camera look_at(const Vec3& eye, const Vec3& target, double hfov_deg, std::size_t width,
               std::size_t height) {
  const Vec3 fwd = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
  const Vec3 right = normalized(cross(fwd, {0, 0, 1}));
  const Vec3 down = cross(fwd, right);
  Camera cam;
  cam.rotation = {right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2]};
  for (int i = 0; i < 3; ++i) {
    cam.translation[i] = -(cam.rotation[i * 3] * eye[0] + cam.rotation[i * 3 + 1] * eye[1] +
                           cam.rotation[i * 3 + 2] * eye[2]);
  }
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.5 * static_cast<double>(width) / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
  cam.cx = 0.5 * static_cast<double>(width);
  cam.cy = 0.5 * static_cast<double>(height);
  return cam;
}

CameraRig make_default_rig(const SceneConfig& cfg, std::size_t num_cameras, std::size_t height,
                           std::size_t width, double hfov_deg) {
  if (num_cameras == 0) throw ParameterError("rig needs at least one camera");
  const auto b = cfg.bounds();
  const double span = std::max(b.max[0] - b.min[0], b.max[1] - b.min[1]);
  const double radius = 0.8 * span;
  const double elevation = 0.5 * (b.max[2] - b.min[2]) + 0.35 * span;
  const Vec3 target{0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1]), b.min[2] + 0.1 * (b.max[2] - b.min[2])};
  CameraRig rig;
  for (std::size_t i = 0; i < num_cameras; ++i) {
    const double az = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(num_cameras) + std::numbers::pi;
    const Vec3 eye{target[0] + radius * std::cos(az), target[1] + radius * std::sin(az), elevation};
    rig.cameras.push_back(look_at(eye, target, hfov_deg, width, height));
  }
  return rig;
}

std::size_t HitSet::valid_count(std::size_t view) const {
  return static_cast<std::size_t>(std::count_if(views.at(view).begin(), views.at(view).end(),
                                                [](const HitSlot& s) { return s.valid; }));
}

std::vector<double> HitSet::valid_mask(std::size_t view) const {
  std::vector<double> m;
  m.reserve(capacity);
  for (const auto& s : views.at(view)) m.push_back(s.valid ? 1.0 : 0.0);
  return m;
}

std::size_t default_hit_capacity(const std::array<std::size_t, 3>& e) {
  const auto cells = e[0] * e[1] * e[2];
  return (cells * 9 + 9) / 10;
}

HitSet project_voxels(const CameraRig& rig, const std::array<std::size_t, 3>& ext,
                      const WorldBounds& bounds, std::optional<std::size_t> capacity) {
  rig.validate();
  for (int a = 0; a < 3; ++a) {
    if (!(bounds.max[a] > bounds.min[a])) throw ParameterError("world bounds are degenerate");
    if (ext[a] == 0) throw ParameterError("query grid extents must be positive");
  }
  HitSet hits;
  hits.capacity = capacity.value_or(default_hit_capacity(ext));
  for (const auto& cam : rig.cameras) {
    std::vector<HitSlot> slots;
    slots.reserve(hits.capacity);
    for (std::size_t x = 0; x < ext[0]; ++x)
      for (std::size_t y = 0; y < ext[1]; ++y)
        for (std::size_t z = 0; z < ext[2]; ++z) {
          if (slots.size() == hits.capacity) break;
          const auto p = cam.project(voxel_center(bounds, ext, {x, y, z}));
          if (!p) continue;
          const double w = static_cast<double>(cam.width), h = static_cast<double>(cam.height);
          if ((*p)[0] < 0.0 || (*p)[0] >= w || (*p)[1] < 0.0 || (*p)[1] >= h) continue;
          slots.push_back({(x * ext[1] + y) * ext[2] + z, (*p)[0] / w, (*p)[1] / h, (*p)[2], true});
        }
    slots.resize(hits.capacity);
    hits.views.push_back(std::move(slots));
  }
  return hits;
}

std::optional<RayHit> march_ray(const SceneSample& scene, const Vec3& origin, const Vec3& dir) {
  const auto& occ = scene.occupancy;
  const std::array<std::size_t, 3> ext{occ.H, occ.W, occ.Z};
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < scene.bounds.min[a] || origin[a] >= scene.bounds.max[a]) return std::nullopt;
      continue;
    }
    double ta = (scene.bounds.min[a] - origin[a]) / dir[a];
    double tb = (scene.bounds.max[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 >= t1) return std::nullopt;

  std::array<long, 3> cell{};
  std::array<long, 3> step{};
  std::array<double, 3> t_max{}, t_delta{};
  const double vs = scene.voxel_size;
  for (int a = 0; a < 3; ++a) {
    const double p = origin[a] + t0 * dir[a];
    long c = static_cast<long>(std::floor((p - scene.bounds.min[a]) / vs));
    cell[a] = std::clamp(c, 0L, static_cast<long>(ext[a]) - 1);
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (scene.bounds.min[a] + static_cast<double>(cell[a] + 1) * vs - origin[a]) / dir[a];
      t_delta[a] = vs / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (scene.bounds.min[a] + static_cast<double>(cell[a]) * vs - origin[a]) / dir[a];
      t_delta[a] = -vs / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }
  double t = t0;
  while (true) {
    const auto idx = occ.index(static_cast<std::size_t>(cell[0]), static_cast<std::size_t>(cell[1]),
                               static_cast<std::size_t>(cell[2]));
    if (occ.labels[idx] != 0) {
      return RayHit{{static_cast<std::size_t>(cell[0]), static_cast<std::size_t>(cell[1]),
                     static_cast<std::size_t>(cell[2])},
                    t};
    }
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t = t_max[axis];
    if (t > t1) return std::nullopt;
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= static_cast<long>(ext[axis])) return std::nullopt;
    t_max[axis] += t_delta[axis];
  }
}

RenderResult render_views(const SceneSample& scene, const CameraRig& rig, std::size_t d,
                          double noise_sigma, std::uint64_t seed, const RenderOptions& opts) {
  rig.validate();
  const auto L = scene.num_classes;
  if (d < L + 1) throw ParameterError("feature dimension must be at least num_classes + 1");
  if (noise_sigma < 0) throw ParameterError("noise_sigma must be non-negative");
  const auto n_views = rig.cameras.size();
  const auto h = rig.cameras[0].height, w = rig.cameras[0].width;

  std::vector<double> feat(n_views * d * h * w, 0.0);
  GroundTruthMasks masks{h, w, {}};
  const Rng base = Rng(seed).split("render");
  for (std::size_t n = 0; n < n_views; ++n) {
    const auto& cam = rig.cameras[n];
    const Vec3 origin = cam.center();
    std::vector<std::int32_t> ids(h * w, 0);
    Rng noise = base.split(n);
    double* fv = &feat[n * d * h * w];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double u = static_cast<double>(j) + 0.5, v = static_cast<double>(i) + 0.5;
        // Direction with unit camera-z component, so the ray parameter is depth.
        const Vec3 c1 = cam.from_camera({(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0});
        const Vec3 dir{c1[0] - origin[0], c1[1] - origin[1], c1[2] - origin[2]};
        const auto hit = march_ray(scene, origin, dir);
        std::size_t label = 0;
        double depth = 1.0;
        if (hit) {
          const auto idx = scene.occupancy.index(hit->cell[0], hit->cell[1], hit->cell[2]);
          label = scene.occupancy.labels[idx];
          ids[i * w + j] = static_cast<std::int32_t>(scene.instance[idx]);
          depth = hit->t / opts.max_depth;
        }
        const auto px = i * w + j;
        fv[label * h * w + px] = opts.embed_scale;
        fv[L * h * w + px] = depth;
      }
    if (noise_sigma > 0.0)
      for (std::size_t k = 0; k < d * h * w; ++k) fv[k] += noise_sigma * noise.normal();
    masks.ids.push_back(std::move(ids));
  }
  return {FeatureMaps{Tensor({n_views, d, h, w}, std::move(feat)), noise_sigma}, std::move(masks)};
}

}  // namespace protoocc::scene
