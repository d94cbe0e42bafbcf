// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "protoocc/mlp.hpp"
#include "protoocc/rng.hpp"
#include "protoocc/tensor.hpp"

// Voxel feature grids here are channel-last: [h, w, z, C].
namespace protoocc::decoder {

using Extents = std::array<std::size_t, 3>;

enum class AugmentationKind { random_dropout, gaussian_noise, transpose, flip };
enum class AugmentationCategory { feature, spatial };

struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::random_dropout;
  double p = 0.1;       // dropout probability
  double sigma = 0.05;  // noise scale, relative to the grid's feature std
  std::vector<std::size_t> axes;  // spatial axes (0 = x, 1 = y, 2 = z)

  AugmentationCategory category() const;
  void validate() const;

  static AugmentationSpec dropout(double p = 0.1);
  static AugmentationSpec noise(double sigma = 0.05);
  static AugmentationSpec transpose(std::size_t a = 0, std::size_t b = 1);
  static AugmentationSpec flip(std::vector<std::size_t> axes = {0, 1});
};

std::string to_string(AugmentationKind kind);
AugmentationKind augmentation_kind_from_string(const std::string& name);

/// Specs combined into one augmented branch (at most two).
using BranchSpec = std::vector<AugmentationSpec>;

/// Augmented branches; the identity branch 0 is implicit and always present.
struct AugmentationPlan {
  std::vector<BranchSpec> branches;

  std::size_t size() const { return branches.size(); }  // P
  void validate() const;
  /// identity + dropout + gaussian noise.
  static AugmentationPlan default_plan();
};

/// Sequence of axis swaps and reversals with an exact inverse.
struct SpatialTransform {
  struct Step {
    bool swap = false;  // swap axes[0] and axes[1]; otherwise reverse `axes`
    std::vector<std::size_t> axes;
  };
  std::vector<Step> steps;

  bool identity() const { return steps.empty(); }
  /// Applies to the spatial axes of a [h, w, z, ...] tensor.
  Tensor apply(const Tensor& grid) const;
  Tensor invert(const Tensor& grid) const;
  Extents apply(Extents e) const;
  /// Kernel K' with invert(CT(apply(x), K)) == CT(x, K') for stride-symmetric
  /// geometry. Each step is an involution, so K' replays the steps in reverse.
  Tensor apply_to_kernel(const Tensor& kernel) const { return invert(kernel); }
};

struct AugmentedGrid {
  Tensor grid;
  SpatialTransform transform;
};

/// Applies the specs in order. Feature augmentations draw from rng; spatial
/// ones are recorded for re-alignment after upsampling.
AugmentedGrid apply_augmentation(const Tensor& grid, const BranchSpec& specs, Rng& rng);

struct ConvGeometry {
  Extents kernel{1, 1, 1};
  Extents stride{1, 1, 1};
  Extents padding{0, 0, 0};

  Extents output(const Extents& input) const;
  void validate() const;
};

/// Transposed 3D convolution: input cell i scatters x[i] K[t] into output
/// cell i * stride + t - padding. x is [h, w, z, Cin], kernel is
/// [kx, ky, kz, Cin, Cout], bias is [Cout] or undefined.
Tensor conv_transpose3d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        const ConvGeometry& geometry);

struct DecoderStage {
  ConvGeometry geometry;
  std::size_t out_channels = 0;
};

struct DecoderConfig {
  std::vector<DecoderStage> stages;
  std::size_t classes = 5;

  /// Query (8, 8, 4) to occupancy (32, 32, 8): a 3x3x3 channel-preserving stage,
  /// then stride-2 stages (2, 2, 2) and (2, 2, 1).
  static DecoderConfig default_for(const Extents& query, const Extents& occupancy, std::size_t d,
                                   std::size_t classes);
  Extents output(const Extents& input) const;
};

struct UpsampleLayer {
  Tensor kernel;  // [kx, ky, kz, Cin, Cout]
  Tensor bias;    // [Cout]
  ConvGeometry geometry;
};

struct DecoderParams {
  std::vector<UpsampleLayer> layers;
  MlpParams classifier;  // per cell, last stage channels -> L

  std::vector<Tensor> parameters() const;
  static DecoderParams init(const DecoderConfig& cfg, std::size_t in_channels, Rng& rng);
};

/// Upsamples, re-aligns with the inverse transform, classifies every cell and
/// applies softmax. Returns [H * W * Z, L] in (x * W + y) * Z + z order.
Tensor decode_branch(const Tensor& grid, const SpatialTransform& inverse, const DecoderParams& params,
                     const Extents& expected);

/// Tempered renormalisation of probability rows [..., L]. Not differentiable:
/// the result is a constant.
Tensor sharpen(const Tensor& probs, double tau);

/// Sharpened average of the branch predictions (a constant).
Tensor consistency_target(std::span<const Tensor> branches, double tau);

/// Mean over branches and cells of the squared distance to a fixed target.
Tensor consistency_loss_to(std::span<const Tensor> branches, const Tensor& target);

/// consistency_loss_to(branches, consistency_target(branches, tau)): gradients
/// flow through the branches only.
Tensor consistency_loss(std::span<const Tensor> branches, double tau);

/// Mean over cells and branch pairs of the L2 distance between predictions.
double mean_pairwise_disagreement(std::span<const Tensor> branches);

}  // namespace protoocc::decoder
