// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "protoocc/decoder.hpp"
#include "protoocc/losses.hpp"
#include "protoocc/scene.hpp"

namespace protoocc {

struct CameraConfig {
  std::size_t count = 2;
  std::size_t image_height = 24, image_width = 32;
  double hfov_deg = 90.0;
};

struct RenderConfig {
  std::size_t channels = 32;  // C of the rendered feature maps
  double noise_sigma = 0.1;
  double embed_scale = 1.0;
};

struct ModelConfig {
  std::array<std::size_t, 3> query{8, 8, 4};
  std::size_t d = 32;
  std::size_t encoder_layers = 3;
  std::size_t n_points = 4;
  double eps = 1e-6;
  std::size_t proto_ratio = 4;  // r
  std::size_t proto_iters = 6;
  double assign_tau = 0.07;
  std::string mask_generator = "grid-kmeans";
  std::size_t mask_target = 16;   // S_target
  std::size_t grid_h = 0, grid_w = 0;  // h', w'; 0 means the feature resolution
};

/// The three switches of the model-design ablation.
struct AblationConfig {
  bool proto_mapping = true;
  bool proto_optimization = true;
  bool mod = true;  // multi-perspective decoding (augmented branches + consistency)
};

struct LossConfig {
  losses::LossWeights weights;
  double tau_cls = 0.3;
  double tau_cons = 0.3;
  std::vector<double> class_weights;  // empty: uniform
};

struct OptimConfig {
  double lr = 2e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::string schedule = "cosine";  // or "constant"
};

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t train_scenes = 200, val_scenes = 40;
  std::uint64_t seed = 0;                       // model init and augmentation
  std::vector<std::uint64_t> seeds{0, 1, 2};    // ablation repeats
  std::uint64_t data_seed = 1000;               // scene generation
  bool eval_each_epoch = true;
};

struct ExperimentConfig {
  scene::SceneConfig scene;
  CameraConfig cameras;
  RenderConfig render;
  ModelConfig model;
  AblationConfig ablation;
  std::vector<decoder::BranchSpec> augmentation = decoder::AugmentationPlan::default_plan().branches;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t grid_h() const { return model.grid_h ? model.grid_h : cameras.image_height; }
  std::size_t grid_w() const { return model.grid_w ? model.grid_w : cameras.image_width; }
  decoder::AugmentationPlan plan() const { return {augmentation}; }
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Sets one field by dotted path, e.g. "ablation.mod" or "model.proto_ratio".
void apply_override(ExperimentConfig& cfg, const std::string& path, const nlohmann::json& value);

nlohmann::json branch_to_json(const decoder::BranchSpec& branch);
decoder::BranchSpec branch_from_json(const nlohmann::json& j);

}  // namespace protoocc
