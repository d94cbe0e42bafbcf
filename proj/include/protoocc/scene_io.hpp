// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "protoocc/camera.hpp"
#include "protoocc/scene.hpp"

namespace protoocc::scene {

inline constexpr std::uint32_t kSceneFormatVersion = 1;

struct SceneFile {
  SceneSample scene;
  CameraRig rig;
};

nlohmann::json rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const nlohmann::json& j);

/// "POSC" container: magic, version, H, W, Z, L (u32 LE), H*W*Z label bytes
/// with x fastest, then a u32-length-prefixed JSON document holding the rig
/// (`cameras`) plus the object list and seed needed to rebuild instance masks.
std::string encode_scene(const SceneSample& scene, const CameraRig& rig);
SceneFile decode_scene(const std::string& bytes);

void write_scene(const std::filesystem::path& path, const SceneSample& scene, const CameraRig& rig);
SceneFile read_scene(const std::filesystem::path& path);

}  // namespace protoocc::scene
