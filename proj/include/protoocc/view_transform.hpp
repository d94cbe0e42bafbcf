// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "protoocc/camera.hpp"
#include "protoocc/mlp.hpp"
#include "protoocc/rng.hpp"
#include "protoocc/tensor.hpp"

namespace protoocc::view {

/// Raw value stored in masked affinity slots; sigmoid(-40) ~ 4e-18.
inline constexpr double kAffinitySentinel = -40.0;

/// Query rows are indexed (x * w + y) * z + zc, matching scene::project_voxels.
struct VoxelQueryGrid {
  std::array<std::size_t, 3> extents{};  // h, w, z
  Tensor features;                       // [h*w*z, d]

  std::size_t cells() const { return extents[0] * extents[1] * extents[2]; }
};

struct AffinityMatrix {
  Tensor raw;                 // [N, M, K]; cosine on valid slots, sentinel elsewhere
  std::vector<double> valid;  // [N * K]

  std::size_t views() const { return raw.size(0); }
  std::size_t prototypes() const { return raw.size(1); }
  std::size_t slots() const { return raw.size(2); }
  /// [N * M * K] mask broadcasting `valid` over prototypes.
  std::vector<double> slot_mask() const;
};

/// Hit-slot rows of the grid, [N, K, d]. Invalid slots read row 0 and are
/// masked by every consumer.
Tensor gather_hits(const Tensor& grid, const scene::HitSet& hits);

/// A[n, m, k] = cos(protos[n, m], queries[n, k]) for valid k.
AffinityMatrix compute_affinity(const Tensor& protos, const Tensor& queries,
                                std::span<const double> valid);

/// sigmoid(A) with invalid slots forced to exactly zero.
Tensor gated_affinity(const AffinityMatrix& a);

/// (protos + sigmoid(A) queries) / (eps + row sums of sigmoid(A)), per view.
Tensor aggregate(const Tensor& protos, const Tensor& queries, const AffinityMatrix& a, double eps);

/// queries + MLP(sigmoid(A)^T voxel_protos) on valid slots; invalid slots pass through.
Tensor dispatch(const Tensor& queries, const AffinityMatrix& a, const Tensor& voxel_protos,
                const MlpParams& mlp);

/// Samples one view's map [C, h, w] at normalised points [R, 2] (x, y in [0, 1)).
/// Pixel centres sit at ((j + 0.5) / w, (i + 0.5) / h); neighbours outside the map
/// read zero and points outside [0, 1)^2 give zero. Differentiable in both inputs.
Tensor bilinear_sample(const Tensor& fmap, const Tensor& points);

struct AttentionParams {
  Tensor offset_weight;  // [2P, d]; offsets in normalised image units, (x, y) per point
  Tensor offset_bias;    // [2P]
  Tensor score_weight;   // [P, d]
  Tensor score_bias;     // [P]
  Tensor value_weight;   // [d, C]

  std::size_t points() const { return score_bias.numel(); }
  std::vector<Tensor> parameters() const;
  static AttentionParams init(std::size_t d, std::size_t channels, std::size_t points, Rng& rng);
};

struct AttentionResult {
  Tensor queries;   // [h*w*z, d]
  Tensor salience;  // G, [N, grid_h * grid_w]
  Tensor weights;   // [N, K, P] softmax over points
  std::vector<double> locations;  // [N, K, P, 2] sampling points (values only)
};

/// Single-scale deformable cross-attention. For each valid slot the attended
/// value o is computed from the points around its projection; a hit query
/// becomes base + mean over its hitting views of (refined - hit + o).
AttentionResult deformable_cross_attention(const Tensor& base, const Tensor& refined,
                                           const Tensor& hit, const scene::FeatureMaps& fmaps,
                                           const scene::HitSet& hits, const AttentionParams& params,
                                           std::size_t grid_h, std::size_t grid_w);

struct EncoderLayerParams {
  MlpParams projection;  // C -> d -> d, prototypes into query space
  MlpParams dispatch;    // d -> d -> d
  AttentionParams attention;
};

struct EncoderConfig {
  std::array<std::size_t, 3> extents{8, 8, 4};
  std::size_t d = 32;
  std::size_t channels = 32;  // C of the feature maps
  std::size_t layers = 3;
  std::size_t points = 4;
  double eps = 1e-6;
  std::size_t grid_h = 24, grid_w = 32;  // h', w'
  bool prototype_mapping = true;  // refine hit queries via aggregate + dispatch
  bool keep_prototypes = true;    // compute A and P_vox even without mapping

  void validate() const;
};

struct EncoderParams {
  Tensor query;  // [h*w*z, d]
  std::vector<EncoderLayerParams> layers;

  std::vector<Tensor> parameters() const;
  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
};

struct EncodeOutput {
  Tensor queries;         // [h*w*z, d]
  Tensor voxel_protos;    // P_vox of the last layer, [N, M, d]; undefined when not computed
  AffinityMatrix affinity;
  Tensor salience;        // G of the last layer, [N, grid_h * grid_w]
  Tensor attention_weights;
};

/// Runs cfg.layers encoder layers from params.query. `protos` are the 2D
/// prototypes P_img, [N, M, C].
EncodeOutput encode(const scene::FeatureMaps& fmaps, const Tensor& protos,
                    const scene::HitSet& hits, const EncoderParams& params,
                    const EncoderConfig& cfg);

}  // namespace protoocc::view
