// SPDX-License-Identifier: Apache-2.0
#include "protoocc/scene_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "protoocc/errors.hpp"

namespace protoocc::scene {

using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("scene file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    auto s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

json primitive_to_json(const Primitive& p) {
  return {{"type", p.type == PrimitiveType::box ? "box" : "sphere"},
          {"label", p.label},
          {"center", p.center},
          {"half_extent", p.half_extent}};
}

Primitive primitive_from_json(const json& j) {
  Primitive p;
  const auto type = j.at("type").get<std::string>();
  if (type == "box") {
    p.type = PrimitiveType::box;
  } else if (type == "sphere") {
    p.type = PrimitiveType::sphere;
  } else {
    throw FormatError("unknown primitive type '" + type + "'");
  }
  p.label = j.at("label").get<std::uint8_t>();
  p.center = j.at("center").get<Vec3>();
  p.half_extent = j.at("half_extent").get<Vec3>();
  return p;
}

}  // namespace

json rig_to_json(const CameraRig& rig) {
  json cams = json::array();
  for (const auto& c : rig.cameras) {
    cams.push_back({{"fx", c.fx},
                    {"fy", c.fy},
                    {"cx", c.cx},
                    {"cy", c.cy},
                    {"rotation", c.rotation},
                    {"translation", c.translation},
                    {"width", c.width},
                    {"height", c.height}});
  }
  return cams;
}

CameraRig rig_from_json(const json& j) {
  CameraRig rig;
  for (const auto& c : j) {
    Camera cam;
    cam.fx = c.at("fx").get<double>();
    cam.fy = c.at("fy").get<double>();
    cam.cx = c.at("cx").get<double>();
    cam.cy = c.at("cy").get<double>();
    cam.rotation = c.at("rotation").get<std::array<double, 9>>();
    cam.translation = c.at("translation").get<Vec3>();
    cam.width = c.at("width").get<std::size_t>();
    cam.height = c.at("height").get<std::size_t>();
    rig.cameras.push_back(cam);
  }
  return rig;
}

std::string encode_scene(const SceneSample& scene, const CameraRig& rig) {
  const auto& occ = scene.occupancy;
  std::string out = "POSC";
  put_u32(out, kSceneFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(occ.H));
  put_u32(out, static_cast<std::uint32_t>(occ.W));
  put_u32(out, static_cast<std::uint32_t>(occ.Z));
  put_u32(out, static_cast<std::uint32_t>(scene.num_classes));
  for (std::size_t z = 0; z < occ.Z; ++z)
    for (std::size_t y = 0; y < occ.W; ++y)
      for (std::size_t x = 0; x < occ.H; ++x) out.push_back(static_cast<char>(occ.at(x, y, z)));

  json objects = json::array();
  for (const auto& p : scene.objects) objects.push_back(primitive_to_json(p));
  const json doc = {{"cameras", rig_to_json(rig)},
                    {"objects", objects},
                    {"seed", scene.seed},
                    {"voxel_size", scene.voxel_size}};
  const auto text = doc.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  return out;
}

SceneFile decode_scene(const std::string& bytes) {
  Reader r{bytes};
  if (r.take(4) != "POSC") throw FormatError("not a POSC scene file (bad magic)");
  const auto version = r.u32();
  if (version != kSceneFormatVersion) {
    throw FormatError("unsupported POSC version " + std::to_string(version));
  }
  SceneConfig cfg;
  cfg.H = r.u32();
  cfg.W = r.u32();
  cfg.Z = r.u32();
  cfg.num_classes = r.u32();
  if (cfg.H == 0 || cfg.W == 0 || cfg.Z == 0 || cfg.num_classes < 2 || cfg.num_classes > 255) {
    throw FormatError("POSC header has invalid extents");
  }
  const auto raw = r.take(cfg.H * cfg.W * cfg.Z);
  const auto json_len = r.u32();
  const auto text = r.take(json_len);
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after POSC document");

  SceneFile file;
  try {
    const auto doc = json::parse(text);
    file.rig = rig_from_json(doc.at("cameras"));
    cfg.voxel_size = doc.value("voxel_size", 1.0);
    std::vector<Primitive> objects;
    for (const auto& o : doc.at("objects")) objects.push_back(primitive_from_json(o));
    file.scene = rasterize(cfg, std::move(objects), doc.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("POSC JSON document invalid: ") + e.what());
  } catch (const GenerationError& e) {
    throw FormatError(std::string("POSC objects invalid: ") + e.what());
  }

  const auto& occ = file.scene.occupancy;
  std::size_t i = 0;
  for (std::size_t z = 0; z < occ.Z; ++z)
    for (std::size_t y = 0; y < occ.W; ++y)
      for (std::size_t x = 0; x < occ.H; ++x, ++i) {
        if (static_cast<std::uint8_t>(raw[i]) != occ.at(x, y, z)) {
          throw FormatError("POSC labels disagree with the object list");
        }
      }
  return file;
}

void write_scene(const std::filesystem::path& path, const SceneSample& scene, const CameraRig& rig) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_scene(scene, rig);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

SceneFile read_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_scene(ss.str());
}

}  // namespace protoocc::scene
