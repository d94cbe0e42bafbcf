// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "protoocc/camera.hpp"
#include "protoocc/clustering.hpp"
#include "protoocc/tensor.hpp"

namespace protoocc::proto {

/// Scatter-adds per-slot values [N, M, K] into the (grid_h x grid_w) cell
/// containing each valid slot's projection: column floor(qx * grid_w), row
/// floor(qy * grid_h). Slots landing outside the grid are dropped.
/// Returns [N, M, grid_h * grid_w].
Tensor map_affinity_to_grid(const Tensor& values, const scene::HitSet& hits, std::size_t grid_h,
                            std::size_t grid_w);

/// X[n, :, p] = sum_m G[n, p] * HA[n, m, p] * P_vox[n, m]. Returns [N, d, grid_h, grid_w].
Tensor prototype_pixel_features(const Tensor& salience, const Tensor& mapped, const Tensor& voxel_protos,
                                std::size_t grid_h, std::size_t grid_w);

struct MaskCentroids {
  Tensor centroids;                 // [N, S, d]; rows of empty masks are zero
  std::vector<std::size_t> counts;  // [N * S]

  bool valid(std::size_t view, std::size_t mask) const { return counts[view * centroids.size(1) + mask] > 0; }
};

/// Mean of the X columns inside each mask.
MaskCentroids mask_centroids(const Tensor& x, const clustering::PseudoMaskSet& masks);

/// Sum over views and pixels of -log softmax_s(cos(M_s, X_p) / tau) at the
/// pixel's own mask, with invalid centroids left out of the normaliser.
/// Returns 0 and warns if no centroid is valid.
Tensor contrastive_loss(const Tensor& x, const MaskCentroids& centroids,
                        const clustering::PseudoMaskSet& masks, double tau);

}  // namespace protoocc::proto
