// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoocc/camera.hpp"
#include "protoocc/tensor.hpp"

namespace protoocc::clustering {

/// Per-view 2D prototypes laid out on a regular grid over the feature map.
struct PrototypeSet2D {
  Tensor features;  // [N, M, d], prototype (u, v) at row u * grid_w + v
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t ratio = 1;

  std::size_t count() const { return grid_h * grid_w; }
};

/// Mean feature per r x r cell. `fmap` is [d, h, w] (one view) or [N, d, h, w].
PrototypeSet2D init_prototypes(const Tensor& fmap, std::size_t ratio);

/// Soft-assignment refinement. Each pixel distributes a softmax over cosine
/// similarities (divided by assign_tau) to the prototypes of the 3x3 block of
/// grid cells around its own cell; each prototype becomes the weighted mean of
/// the pixels assigned to it. Values only: no gradient is recorded.
PrototypeSet2D iterate_prototypes(const Tensor& fmap, const PrototypeSet2D& protos,
                                  std::size_t iters, double assign_tau);

enum class MaskGenerator { grid_kmeans, ground_truth };

std::string to_string(MaskGenerator g);
MaskGenerator mask_generator_from_string(const std::string& name);

struct PseudoMaskSet {
  std::size_t height = 0, width = 0;
  std::size_t num_masks = 0;  // ids lie in [0, num_masks) in every view
  MaskGenerator generator = MaskGenerator::grid_kmeans;
  std::vector<std::vector<std::int32_t>> ids;  // per view, row-major

  std::size_t num_views() const { return ids.size(); }
  std::vector<std::size_t> counts(std::size_t view) const;
};

/// Nearest-neighbour resize of an id map (pixel-centre sampling).
std::vector<std::int32_t> resize_nearest(std::span<const std::int32_t> ids, std::size_t h,
                                         std::size_t w, std::size_t out_h, std::size_t out_w);

/// Relabels so that each 4-connected region of equal id gets its own id,
/// numbered in raster order of first appearance. Returns the region count.
std::size_t relabel_components(std::vector<std::int32_t>& ids, std::size_t h, std::size_t w);

/// Merges every region smaller than `min_size` pixels into its largest
/// 4-neighbour until none is left, then relabels. Returns the region count.
std::size_t merge_small_components(std::vector<std::int32_t>& ids, std::size_t h, std::size_t w,
                                   std::size_t min_size);

/// Cosine k-means over pixel features, seeded on a jittered regular grid of
/// `target` cells, 10 iterations in which each pixel only considers the seeds
/// of nearby cells. The result is resized, split into connected regions, and
/// regions under a quarter of the nominal size h' w' / target are merged away.
PseudoMaskSet grid_kmeans_masks(const Tensor& fmaps, std::size_t out_h, std::size_t out_w,
                                std::size_t target, std::uint64_t seed);

/// Ground-truth instance ids resized to (out_h, out_w). num_masks is the id
/// range, so ids absent from a view give empty masks there.
PseudoMaskSet ground_truth_masks(const scene::GroundTruthMasks& masks, std::size_t out_h,
                                 std::size_t out_w, std::size_t target);

}  // namespace protoocc::clustering
