// SPDX-License-Identifier: Apache-2.0
#include "protoocc/proto_opt.hpp"

#include <cmath>

#include "protoocc/errors.hpp"
#include "protoocc/log.hpp"
#include "protoocc/ops.hpp"

namespace protoocc::proto {

namespace {

// Large enough that exp(kExcluded / tau) underflows for any sane tau.
constexpr double kExcluded = -1e6;

void check_masks(const Tensor& x, const clustering::PseudoMaskSet& masks) {
  if (x.rank() != 4) throw DimensionError("pixel features must be [N, d, h', w'], got " + shape_str(x.shape()));
  if (masks.num_views() != x.size(0) || masks.height != x.size(2) || masks.width != x.size(3))
    throw DimensionError("pseudo masks (" + std::to_string(masks.num_views()) + " views, " +
                         std::to_string(masks.height) + "x" + std::to_string(masks.width) +
                         ") do not match pixel features " + shape_str(x.shape()));
  for (const auto& v : masks.ids) {
    if (v.size() != masks.height * masks.width) throw DimensionError("pseudo mask id map has the wrong size");
    for (auto id : v)
      if (id < 0 || static_cast<std::size_t>(id) >= masks.num_masks)
        throw DataError("pseudo mask id " + std::to_string(id) + " outside [0, " + std::to_string(masks.num_masks) + ")");
  }
}

}  // namespace

Tensor map_affinity_to_grid(const Tensor& values, const scene::HitSet& hits, std::size_t grid_h,
                            std::size_t grid_w) {
  if (values.rank() != 3 || values.size(0) != hits.num_views() || values.size(2) != hits.capacity)
    throw DimensionError("map_affinity_to_grid: values " + shape_str(values.shape()) +
                         " do not match the hit set");
  if (grid_h == 0 || grid_w == 0) throw ParameterError("map_affinity_to_grid: empty grid");
  const std::size_t n = values.size(0), m = values.size(1), k = values.size(2);
  const std::size_t cells = grid_h * grid_w;
  std::vector<Tensor> per_view;
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> target(k, 0);
    std::vector<double> keep(k * m, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      const auto& slot = hits.views[v][s];
      if (!slot.valid) continue;
      const double cx = std::floor(slot.qx * static_cast<double>(grid_w));
      const double cy = std::floor(slot.qy * static_cast<double>(grid_h));
      if (cx < 0 || cy < 0 || cx >= static_cast<double>(grid_w) || cy >= static_cast<double>(grid_h)) continue;
      target[s] = static_cast<std::size_t>(cy) * grid_w + static_cast<std::size_t>(cx);
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(s * m), m, 1.0);
    }
    const Tensor slots = ops::mask(ops::transpose(ops::select(values, v)), keep);  // [K, M]
    per_view.push_back(ops::transpose(ops::scatter_add_rows(slots, target, cells)));
  }
  return ops::stack(per_view);
}

Tensor prototype_pixel_features(const Tensor& salience, const Tensor& mapped, const Tensor& voxel_protos,
                                std::size_t grid_h, std::size_t grid_w) {
  const std::size_t cells = grid_h * grid_w;
  if (salience.rank() != 2 || mapped.rank() != 3 || voxel_protos.rank() != 3 ||
      salience.size(1) != cells || mapped.size(2) != cells || mapped.size(0) != salience.size(0) ||
      voxel_protos.size(0) != salience.size(0) || voxel_protos.size(1) != mapped.size(1))
    throw DimensionError("prototype_pixel_features: incompatible shapes G " + shape_str(salience.shape()) +
                         ", HA " + shape_str(mapped.shape()) + ", P_vox " + shape_str(voxel_protos.shape()));
  const std::size_t n = salience.size(0), d = voxel_protos.size(2);
  std::vector<Tensor> per_view;
  for (std::size_t v = 0; v < n; ++v) {
    const Tensor weight = ops::mul(ops::select(mapped, v), ops::select(salience, v));  // [M, D]
    per_view.push_back(ops::matmul(ops::transpose(ops::select(voxel_protos, v)), weight));
  }
  return ops::reshape(ops::stack(per_view), {n, d, grid_h, grid_w});
}

MaskCentroids mask_centroids(const Tensor& x, const clustering::PseudoMaskSet& masks) {
  check_masks(x, masks);
  const std::size_t n = x.size(0), d = x.size(1), pixels = x.size(2) * x.size(3), s = masks.num_masks;
  MaskCentroids out;
  std::vector<Tensor> per_view;
  for (std::size_t v = 0; v < n; ++v) {
    const auto counts = masks.counts(v);
    std::vector<std::size_t> rows(masks.ids[v].begin(), masks.ids[v].end());
    std::vector<double> inv(s);
    for (std::size_t k = 0; k < s; ++k) inv[k] = counts[k] ? 1.0 / static_cast<double>(counts[k]) : 0.0;
    const Tensor columns = ops::transpose(ops::reshape(ops::select(x, v), {d, pixels}));  // [D, d]
    per_view.push_back(ops::scale_rows(ops::scatter_add_rows(columns, rows, s), Tensor({s}, inv)));
    out.counts.insert(out.counts.end(), counts.begin(), counts.end());
  }
  out.centroids = ops::stack(per_view);
  return out;
}

Tensor contrastive_loss(const Tensor& x, const MaskCentroids& centroids,
                        const clustering::PseudoMaskSet& masks, double tau) {
  if (!(tau > 0)) throw ParameterError("contrastive_loss: tau_cls must be > 0");
  check_masks(x, masks);
  const std::size_t n = x.size(0), d = x.size(1), pixels = x.size(2) * x.size(3), s = masks.num_masks;
  if (centroids.centroids.shape() != Shape{n, s, d} || centroids.counts.size() != n * s)
    throw DimensionError("contrastive_loss: centroids do not match the masks");

  std::vector<Tensor> terms;
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> keep(pixels * s), excluded(pixels * s), pixel_weight(pixels, 0.0);
    bool any = false;
    for (std::size_t k = 0; k < s; ++k) any = any || centroids.valid(v, k);
    if (!any) continue;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t k = 0; k < s; ++k) {
        const bool ok = centroids.valid(v, k);
        keep[p * s + k] = ok ? 1.0 : 0.0;
        excluded[p * s + k] = ok ? 0.0 : kExcluded;
      }
      pixel_weight[p] = centroids.valid(v, static_cast<std::size_t>(masks.ids[v][p])) ? 1.0 : 0.0;
    }
    const Tensor columns = ops::transpose(ops::reshape(ops::select(x, v), {d, pixels}));
    const Tensor cos = ops::pairwise_cosine(columns, ops::select(centroids.centroids, v));  // [D, S]
    const Tensor logits = ops::add(ops::mask(cos, keep), Tensor({pixels, s}, excluded));
    std::vector<std::size_t> own(masks.ids[v].begin(), masks.ids[v].end());
    for (std::size_t p = 0; p < pixels; ++p)
      if (pixel_weight[p] == 0) own[p] = 0;
    const Tensor picked = ops::pick(ops::log_softmax(logits, tau), own);
    terms.push_back(ops::neg(ops::sum(ops::mask(picked, pixel_weight))));
  }
  if (terms.empty()) {
    warn("contrastive loss: no valid mask centroid in any view; contribution set to 0");
    return Tensor::scalar(0.0);
  }
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return total;
}

}  // namespace protoocc::proto
