#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "protoocc/camera.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/scene.hpp"
#include "protoocc/scene_io.hpp"

using namespace protoocc;
using namespace protoocc::scene;

namespace {

SceneConfig small_config() {
  SceneConfig cfg;
  cfg.H = cfg.W = cfg.Z = 16;
  cfg.num_classes = 4;
  cfg.min_objects = cfg.max_objects = 3;
  cfg.sphere_probability = 0.0;
  cfg.box_min = 3;
  cfg.box_max = 6;
  return cfg;
}

// Fine fixed-step march; independent of the DDA traversal.
std::uint8_t brute_force_label(const SceneSample& s, const Vec3& o, const Vec3& dir) {
  const auto& occ = s.occupancy;
  for (double t = 0.0; t < 200.0; t += 1e-3) {
    const Vec3 p{o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]};
    bool inside = true;
    std::array<std::size_t, 3> c{};
    const std::array<std::size_t, 3> ext{occ.H, occ.W, occ.Z};
    for (int a = 0; a < 3; ++a) {
      const double f = (p[a] - s.bounds.min[a]) / s.voxel_size;
      if (f < 0 || f >= static_cast<double>(ext[a])) {
        inside = false;
        break;
      }
      c[a] = static_cast<std::size_t>(f);
    }
    if (inside && occ.at(c[0], c[1], c[2]) != 0) return occ.at(c[0], c[1], c[2]);
  }
  return 0;
}

}  // namespace

TEST_CASE("generate_scene is deterministic") {
  const auto cfg = small_config();
  const auto a = generate_scene(cfg, 7);
  const auto b = generate_scene(cfg, 7);
  CHECK(a.occupancy.labels == b.occupancy.labels);
  CHECK(a.instance == b.instance);
  CHECK(generate_scene(cfg, 8).occupancy.labels != a.occupancy.labels);
}

TEST_CASE("generate_scene with three distinct boxes yields three labels") {
  const auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_scene(cfg, seed);
    std::set<int> present;
    for (auto l : s.occupancy.labels)
      if (l != 0) present.insert(l);
    CHECK(present.size() == 3);
  }
}

TEST_CASE("every non-free voxel belongs to exactly one primitive") {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_scene(cfg, seed);
    CHECK(s.objects.size() >= cfg.min_objects);
    CHECK(s.objects.size() <= cfg.max_objects);
    std::size_t occupied = 0;
    for (std::size_t x = 0; x < cfg.H; ++x)
      for (std::size_t y = 0; y < cfg.W; ++y)
        for (std::size_t z = 0; z < cfg.Z; ++z) {
          const auto c = voxel_center(s.bounds, {cfg.H, cfg.W, cfg.Z}, {x, y, z});
          int owners = 0;
          std::uint8_t owner_label = 0;
          for (const auto& o : s.objects)
            if (o.contains(c)) {
              ++owners;
              owner_label = o.label;
            }
          const auto label = s.occupancy.at(x, y, z);
          CHECK(label < cfg.num_classes);
          if (label != 0) {
            ++occupied;
            CHECK(owners == 1);
            CHECK(owner_label == label);
          } else {
            CHECK(owners == 0);
          }
        }
    CHECK(occupied > 0);
  }
}

TEST_CASE("empty scenes only with allow_empty") {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;
  CHECK_THROWS_AS(generate_scene(cfg, 1), ParameterError);
  cfg.allow_empty = true;
  const auto s = generate_scene(cfg, 1);
  for (auto l : s.occupancy.labels) CHECK(l == 0);
}

TEST_CASE("generate_scene preconditions and unsatisfiable placement") {
  SceneConfig cfg;
  cfg.Z = 4;
  CHECK_THROWS_AS(generate_scene(cfg, 0), ParameterError);
  cfg = SceneConfig{};
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate_scene(cfg, 0), ParameterError);
  cfg = SceneConfig{};
  cfg.H = cfg.W = cfg.Z = 8;
  cfg.min_objects = cfg.max_objects = 6;
  cfg.box_min = cfg.box_max = 8;
  cfg.sphere_probability = 0.0;
  cfg.max_retries = 5;
  CHECK_THROWS_AS(generate_scene(cfg, 0), GenerationError);
}

TEST_CASE("project_voxels: principal point and frustum culling") {
  Camera cam;
  cam.fx = cam.fy = 10;
  cam.cx = 7;
  cam.cy = 5;
  cam.width = 16;
  cam.height = 12;
  cam.translation = {0, 0, 0};
  CameraRig rig{{cam}};
  // A 1x1x1 query grid whose only centre sits on the optical axis at depth 1.
  WorldBounds on_axis{{-0.5, -0.5, 0.5}, {0.5, 0.5, 1.5}};
  auto hits = project_voxels(rig, {1, 1, 1}, on_axis, 1);
  REQUIRE(hits.views[0][0].valid);
  CHECK(hits.views[0][0].qx == doctest::Approx(7.0 / 16.0));
  CHECK(hits.views[0][0].qy == doctest::Approx(5.0 / 12.0));
  CHECK(hits.views[0][0].depth == doctest::Approx(1.0));

  WorldBounds behind{{-0.5, -0.5, -1.5}, {0.5, 0.5, -0.5}};
  hits = project_voxels(rig, {1, 1, 1}, behind, 1);
  CHECK_FALSE(hits.views[0][0].valid);

  CameraRig bad = rig;
  bad.cameras[0].fx = 0;
  CHECK_THROWS_AS(project_voxels(bad, {1, 1, 1}, on_axis), ParameterError);
  CHECK_THROWS_AS(project_voxels(rig, {1, 1, 1}, WorldBounds{{0, 0, 0}, {1, 0, 1}}), ParameterError);
}

TEST_CASE("project_voxels matches brute-force projection of a 2x2x1 grid") {
  // 90 degree camera at the origin looking down +x of the world.
  const auto cam = look_at({-3, 0, 0.5}, {0, 0, 0.5}, 90.0, 8, 8);
  CameraRig rig{{cam}};
  const WorldBounds b{{-1, -4, 0}, {1, 0, 1}};
  const auto hits = project_voxels(rig, {2, 2, 1}, b, 4);
  std::set<std::size_t> expected;
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y) {
      const auto c = voxel_center(b, {2, 2, 1}, {x, y, 0});
      // Camera frame by hand: forward +x, right -y, down -z.
      const double depth = c[0] + 3.0, right = -c[1], down = -(c[2] - 0.5);
      const double u = cam.fx * right / depth + cam.cx, v = cam.fy * down / depth + cam.cy;
      if (depth > 0 && u >= 0 && u < 8 && v >= 0 && v < 8) expected.insert(x * 2 + y);
    }
  std::set<std::size_t> got;
  for (const auto& s : hits.views[0])
    if (s.valid) got.insert(s.query_index);
  CHECK(got == expected);
  CHECK(got.size() == 3);  // only (x=-0.5, y=-3) falls outside u<8
}

TEST_CASE("projection round trip recovers voxel centres") {
  SceneConfig cfg;
  const auto rig = make_default_rig(cfg, 3, 24, 32);
  const std::array<std::size_t, 3> ext{8, 8, 4};
  const auto hits = project_voxels(rig, ext, cfg.bounds(), ext[0] * ext[1] * ext[2]);
  std::size_t checked = 0;
  for (std::size_t n = 0; n < rig.cameras.size(); ++n) {
    for (const auto& s : hits.views[n]) {
      if (!s.valid) continue;
      const std::size_t x = s.query_index / (ext[1] * ext[2]);
      const std::size_t y = (s.query_index / ext[2]) % ext[1];
      const std::size_t z = s.query_index % ext[2];
      const auto c = voxel_center(cfg.bounds(), ext, {x, y, z});
      const auto p = rig.cameras[n].unproject(s.qx, s.qy, s.depth);
      for (int a = 0; a < 3; ++a) CHECK(std::abs(p[a] - c[a]) <= 1e-9);
      CHECK(s.qx >= 0.0);
      CHECK(s.qx <= 1.0);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("hit capacity pads with invalid slots") {
  CHECK(default_hit_capacity({8, 8, 4}) == 231);
  CHECK(default_hit_capacity({2, 2, 1}) == 4);
  SceneConfig cfg;
  const auto rig = make_default_rig(cfg, 2, 24, 32);
  const auto hits = project_voxels(rig, {8, 8, 4}, cfg.bounds());
  for (const auto& v : hits.views) CHECK(v.size() == 231);
  CHECK(hits.valid_count(0) > 0);
}

TEST_CASE("render_views with one box matches a brute-force ray march") {
  SceneConfig cfg;
  cfg.num_classes = 4;
  const auto scene = rasterize(
      cfg, {Primitive{PrimitiveType::box, 2, {0, 0, 3}, {5, 5, 3}}}, 0);
  const auto rig = make_default_rig(cfg, 2, 12, 16);
  const std::size_t d = 8;
  const auto out = render_views(scene, rig, d, 0.0, 3);
  const auto& f = out.features.features;
  const std::size_t h = 12, w = 16;
  std::size_t agree = 0, total = 0;
  for (std::size_t n = 0; n < 2; ++n) {
    const auto& cam = rig.cameras[n];
    // Central pixel sees the box.
    const std::size_t ci = h / 2, cj = w / 2;
    CHECK(f[((n * d + 2) * h + ci) * w + cj] == 1.0);
    CHECK(f[((n * d + 0) * h + ci) * w + cj] == 0.0);
    CHECK(out.masks.ids[n][ci * w + cj] == 1);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const Vec3 o = cam.center();
        const auto p1 = cam.from_camera({(j + 0.5 - cam.cx) / cam.fx, (i + 0.5 - cam.cy) / cam.fy, 1.0});
        const Vec3 dir{p1[0] - o[0], p1[1] - o[1], p1[2] - o[2]};
        const auto expected = brute_force_label(scene, o, dir);
        std::size_t got = 0;
        for (std::size_t c = 0; c < 4; ++c)
          if (f[((n * d + c) * h + i) * w + j] == 1.0) got = c;
        ++total;
        if (got == expected) ++agree;
        CHECK(out.masks.ids[n][i * w + j] == (expected ? 1 : 0));
      }
  }
  CHECK(agree == total);
}

TEST_CASE("render_views: empty scene, determinism, mask partition") {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;
  cfg.allow_empty = true;
  const auto rig = make_default_rig(cfg, 2, 12, 16);
  const auto empty = render_views(generate_scene(cfg, 0), rig, 8, 0.1, 1);
  for (const auto& v : empty.masks.ids)
    for (auto id : v) CHECK(id == 0);

  SceneConfig full;
  const auto scene = generate_scene(full, 4);
  const auto a = render_views(scene, rig, 8, 0.3, 99);
  const auto b = render_views(scene, rig, 8, 0.3, 99);
  CHECK(std::equal(a.features.features.data().begin(), a.features.features.data().end(),
                   b.features.features.data().begin()));
  CHECK(a.masks.ids == b.masks.ids);
  const auto c = render_views(scene, rig, 8, 0.3, 100);
  CHECK_FALSE(std::equal(a.features.features.data().begin(), a.features.features.data().end(),
                         c.features.features.data().begin()));

  for (const auto& v : a.masks.ids) {
    std::map<int, std::size_t> counts;
    for (auto id : v) ++counts[id];
    std::size_t total = 0;
    for (auto& [id, n] : counts) {
      CHECK(id >= 0);
      CHECK(static_cast<std::size_t>(id) <= scene.objects.size());
      total += n;
    }
    CHECK(total == 12u * 16u);
  }
  CHECK_THROWS_AS(render_views(scene, rig, full.num_classes, 0.0, 0), ParameterError);
}

TEST_CASE("POSC round trip and corruption") {
  SceneConfig cfg;
  const auto scene = generate_scene(cfg, 12);
  const auto rig = make_default_rig(cfg, 2, 24, 32);
  const auto bytes = encode_scene(scene, rig);
  CHECK(bytes.substr(0, 4) == "POSC");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  // H at offset 8, little endian.
  CHECK(static_cast<unsigned char>(bytes[8]) == cfg.H);
  // Labels are stored with x fastest.
  const std::size_t label_offset = 24;
  CHECK(static_cast<std::uint8_t>(bytes[label_offset + 1]) == scene.occupancy.at(1, 0, 0));
  CHECK(static_cast<std::uint8_t>(bytes[label_offset + cfg.H]) == scene.occupancy.at(0, 1, 0));

  const auto file = decode_scene(bytes);
  CHECK(file.scene.occupancy.labels == scene.occupancy.labels);
  CHECK(file.scene.instance == scene.instance);
  CHECK(file.scene.seed == scene.seed);
  REQUIRE(file.rig.cameras.size() == 2);
  CHECK(file.rig.cameras[1].rotation == rig.cameras[1].rotation);
  CHECK(encode_scene(file.scene, file.rig) == bytes);

  CHECK_THROWS_AS(decode_scene(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_scene(bytes.substr(0, 30)), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_scene(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_scene(bad), FormatError);
}
