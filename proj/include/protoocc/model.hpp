// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "protoocc/camera.hpp"
#include "protoocc/clustering.hpp"
#include "protoocc/config.hpp"
#include "protoocc/decoder.hpp"
#include "protoocc/scene_io.hpp"
#include "protoocc/view_transform.hpp"

namespace protoocc::harness {

/// Validation scenes use data_seed + this offset so they never meet training seeds.
inline constexpr std::uint64_t kValidationSeedOffset = 1'000'000;

/// Scenes with seeds seed, seed + 1, ... on the configured default rig.
std::vector<scene::SceneFile> generate_scenes(const ExperimentConfig& cfg, std::size_t count, std::uint64_t seed);

/// Files are named scene_00000.posc, scene_00001.posc, ...
void write_scene_dir(const std::filesystem::path& dir, std::span<const scene::SceneFile> scenes);
/// Reads every *.posc file in name order.
std::vector<scene::SceneFile> read_scene_dir(const std::filesystem::path& dir);

/// Everything a training step needs that does not depend on learnable weights.
struct PreparedScene {
  scene::FeatureMaps features;
  scene::HitSet hits;
  Tensor prototypes;  // P_img, [N, M, C]
  clustering::PseudoMaskSet masks;
  std::vector<std::uint8_t> labels;
};

/// Throws ConfigError naming the field when the scene does not match cfg.
PreparedScene prepare_scene(const scene::SceneFile& file, const ExperimentConfig& cfg);
std::vector<PreparedScene> prepare_scenes(std::span<const scene::SceneFile> files, const ExperimentConfig& cfg);

view::EncoderConfig encoder_config(const ExperimentConfig& cfg);
decoder::DecoderConfig decoder_config(const ExperimentConfig& cfg);

using NamedTensor = std::pair<std::string, Tensor>;

struct Model {
  view::EncoderParams encoder;
  decoder::DecoderParams decoder;

  /// Stable names in a fixed order; the tensors alias the model's storage.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  static Model init(const ExperimentConfig& cfg, Rng& rng);
};

struct LossParts {
  double total = 0, occupancy = 0, lovasz = 0, contrastive = 0, consistency = 0;
  double disagreement = 0;  // mean pairwise L2 between branches, 0 with one branch
};

struct ForwardResult {
  Tensor loss;
  LossParts parts;
  std::vector<Tensor> branches;  // [H*W*Z, L] per branch, branch 0 first
};

/// Full objective on one scene. `rng` drives the feature-level augmentations.
/// Throws EvaluationError naming the component if any loss is non-finite.
ForwardResult forward_loss(const Model& model, const PreparedScene& scene, const ExperimentConfig& cfg, Rng& rng);

/// Branch-0 class probabilities, [H*W*Z, L]. Records no graph.
Tensor predict(const Model& model, const PreparedScene& scene, const ExperimentConfig& cfg);

}  // namespace protoocc::harness
