// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protoocc/losses.hpp"
#include "protoocc/model.hpp"

namespace protoocc::harness {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossParts train;        // means over the epoch's steps
  std::optional<double> val_miou, val_iou;
  double wall_seconds = 0;
};

struct MetricsLog {
  std::vector<EpochRecord> epochs;

  /// Wall time is left out unless asked for, so logs of repeat runs compare equal.
  std::string to_csv(bool include_wall_time = false) const;
};

struct Checkpoint {
  ExperimentConfig config;
  std::vector<NamedTensor> tensors;  // values only
  std::uint64_t step = 0;
  Rng::State rng_state;
};

/// Snapshot of the model with every value rounded to f32, the precision it is stored in.
Checkpoint make_checkpoint(const Model& model, const ExperimentConfig& cfg, std::uint64_t step, Rng::State rng);

/// Rebuilds the model for ckpt.config and copies the stored values in by name.
Model model_from_checkpoint(const Checkpoint& ckpt);

/// "POCC" binary container; see the README for the layout.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// FormatError on bad magic, version, or truncation; ConfigError naming the
/// field when the stored config is invalid or disagrees with the tensors.
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Decoupled weight decay on tensors of rank >= 2; biases are exempt.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const OptimConfig& cfg, std::size_t total_steps);

  double learning_rate() const;
  void step();
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimConfig cfg_;
  std::size_t total_steps_;
  std::size_t t_ = 0;
};

struct EvalMetrics {
  double miou = 0;
  double iou = 0;  // occupied vs free
  std::vector<std::optional<double>> per_class;
};

/// Branch-0 predictions scored over all scenes, free space excluded from the mean.
EvalMetrics evaluate_model(const Model& model, const ExperimentConfig& cfg, std::span<const PreparedScene> scenes);
EvalMetrics evaluate(const Checkpoint& ckpt, std::span<const PreparedScene> scenes);
/// Prepares the scenes with the checkpoint's config first.
EvalMetrics evaluate(const Checkpoint& ckpt, std::span<const scene::SceneFile> scenes);

struct TrainResult {
  Checkpoint checkpoint;
  MetricsLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One scene per step, in a fresh shuffled order every epoch. `val` may be empty.
TrainResult train(const ExperimentConfig& cfg, std::span<const PreparedScene> scenes,
                  std::span<const PreparedScene> val, std::uint64_t seed, const EpochCallback& on_epoch = {});

}  // namespace protoocc::harness
