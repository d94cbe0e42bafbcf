// SPDX-License-Identifier: Apache-2.0
#include "protoocc/view_transform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protoocc/errors.hpp"
#include "protoocc/ops.hpp"

namespace protoocc::view {

using detail::Node;

namespace {

void require_shape(const Tensor& t, const Shape& want, const char* what) {
  if (!t.defined() || t.shape() != want)
    throw DimensionError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

Tensor constant(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

// valid [N*K] repeated over M prototypes -> [N*M*K].
std::vector<double> broadcast_valid(std::span<const double> valid, std::size_t n, std::size_t m,
                                   std::size_t k) {
  std::vector<double> out(n * m * k);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < m; ++b)
      std::copy_n(valid.begin() + static_cast<std::ptrdiff_t>(a * k), k,
                  out.begin() + static_cast<std::ptrdiff_t>((a * m + b) * k));
  return out;
}

Tensor uniform_leaf(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<double> AffinityMatrix::slot_mask() const {
  return broadcast_valid(valid, views(), prototypes(), slots());
}

Tensor gather_hits(const Tensor& grid, const scene::HitSet& hits) {
  if (grid.rank() != 2) throw DimensionError("query grid must be [cells, d], got " + shape_str(grid.shape()));
  std::vector<std::size_t> rows;
  rows.reserve(hits.num_views() * hits.capacity);
  for (const auto& v : hits.views) {
    if (v.size() != hits.capacity) throw DimensionError("hit list does not match capacity");
    for (const auto& s : v) {
      if (s.valid && s.query_index >= grid.size(0))
        throw DimensionError("hit slot query index " + std::to_string(s.query_index) +
                             " outside grid of " + std::to_string(grid.size(0)) + " cells");
      rows.push_back(s.valid ? s.query_index : 0);
    }
  }
  return ops::reshape(ops::gather_rows(grid, rows), {hits.num_views(), hits.capacity, grid.size(1)});
}

AffinityMatrix compute_affinity(const Tensor& protos, const Tensor& queries,
                                std::span<const double> valid) {
  if (protos.rank() != 3 || queries.rank() != 3 || protos.size(0) != queries.size(0) ||
      protos.size(2) != queries.size(2))
    throw DimensionError("compute_affinity: incompatible shapes " + shape_str(protos.shape()) +
                         " and " + shape_str(queries.shape()));
  const std::size_t n = protos.size(0), m = protos.size(1), k = queries.size(1);
  if (valid.size() != n * k) throw DimensionError("compute_affinity: validity mask size mismatch");
  std::vector<Tensor> per_view;
  for (std::size_t v = 0; v < n; ++v)
    per_view.push_back(ops::pairwise_cosine(ops::select(protos, v), ops::select(queries, v)));
  AffinityMatrix out;
  out.valid.assign(valid.begin(), valid.end());
  const auto keep = broadcast_valid(valid, n, m, k);
  std::vector<double> fill(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) fill[i] = keep[i] > 0 ? 0.0 : kAffinitySentinel;
  out.raw = ops::add(ops::mask(ops::stack(per_view), keep), constant({n, m, k}, std::move(fill)));
  return out;
}

Tensor gated_affinity(const AffinityMatrix& a) { return ops::mask(ops::sigmoid(a.raw), a.slot_mask()); }

Tensor aggregate(const Tensor& protos, const Tensor& queries, const AffinityMatrix& a, double eps) {
  if (!(eps > 0)) throw ParameterError("aggregate: eps must be > 0");
  const std::size_t n = a.views(), m = a.prototypes(), k = a.slots();
  if (protos.rank() != 3) throw DimensionError("aggregate: prototypes must be [N, M, d]");
  require_shape(protos, {n, m, protos.size(2)}, "aggregate protos");
  require_shape(queries, {n, k, protos.size(2)}, "aggregate queries");
  const Tensor gate = gated_affinity(a);
  std::vector<Tensor> out;
  for (std::size_t v = 0; v < n; ++v) {
    const Tensor g = ops::select(gate, v);
    const Tensor num = ops::add(ops::select(protos, v), ops::matmul(g, ops::select(queries, v)));
    out.push_back(ops::scale_rows(num, ops::reciprocal(ops::add_scalar(ops::sum_last(g), eps))));
  }
  return ops::stack(out);
}

Tensor dispatch(const Tensor& queries, const AffinityMatrix& a, const Tensor& voxel_protos,
                const MlpParams& mlp) {
  const std::size_t n = a.views(), m = a.prototypes(), k = a.slots();
  const std::size_t d = queries.rank() == 3 ? queries.size(2) : 0;
  require_shape(queries, {n, k, d}, "dispatch queries");
  require_shape(voxel_protos, {n, m, d}, "dispatch voxel prototypes");
  if (mlp.in_dim() != d || mlp.out_dim() != d)
    throw DimensionError("dispatch MLP must map " + std::to_string(d) + " -> " + std::to_string(d));
  const Tensor gate = gated_affinity(a);
  std::vector<Tensor> messages;
  for (std::size_t v = 0; v < n; ++v)
    messages.push_back(ops::matmul(ops::transpose(ops::select(gate, v)), ops::select(voxel_protos, v)));
  std::vector<double> rows(n * k * d);
  for (std::size_t i = 0; i < n * k; ++i) std::fill_n(rows.begin() + static_cast<std::ptrdiff_t>(i * d), d, a.valid[i]);
  return ops::add(queries, ops::mask(mlp_forward(mlp, ops::stack(messages)), rows));
}

Tensor bilinear_sample(const Tensor& fmap, const Tensor& points) {
  if (fmap.rank() != 3 || points.rank() != 2 || points.size(1) != 2)
    throw DimensionError("bilinear_sample: expected [C,h,w] and [R,2], got " + shape_str(fmap.shape()) +
                         " and " + shape_str(points.shape()));
  const std::size_t c = fmap.size(0), h = fmap.size(1), w = fmap.size(2), r = points.size(0);

  // Per point: four corner offsets (or -1) and weights, plus position derivatives.
  struct Tap {
    std::array<std::ptrdiff_t, 4> at{-1, -1, -1, -1};
    std::array<double, 4> wt{};
    std::array<double, 4> dwx{}, dwy{};
  };
  std::vector<Tap> taps(r);
  const auto pv = points.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double x = pv[2 * i], y = pv[2 * i + 1];
    if (!(x >= 0 && x < 1 && y >= 0 && y < 1)) continue;
    const double px = x * static_cast<double>(w) - 0.5, py = y * static_cast<double>(h) - 0.5;
    const double x0 = std::floor(px), y0 = std::floor(py);
    const double fx = px - x0, fy = py - y0;
    const std::array<double, 4> wx{1 - fx, fx, 1 - fx, fx}, wy{1 - fy, 1 - fy, fy, fy};
    const std::array<double, 4> sx{-1, 1, -1, 1}, sy{-1, -1, 1, 1};
    for (int t = 0; t < 4; ++t) {
      const auto cx = static_cast<std::ptrdiff_t>(x0) + (t & 1);
      const auto cy = static_cast<std::ptrdiff_t>(y0) + (t >> 1);
      if (cx < 0 || cy < 0 || cx >= static_cast<std::ptrdiff_t>(w) || cy >= static_cast<std::ptrdiff_t>(h)) continue;
      taps[i].at[t] = cy * static_cast<std::ptrdiff_t>(w) + cx;
      taps[i].wt[t] = wx[t] * wy[t];
      taps[i].dwx[t] = sx[t] * wy[t] * static_cast<double>(w);
      taps[i].dwy[t] = sy[t] * wx[t] * static_cast<double>(h);
    }
  }
  const std::size_t plane = h * w;
  std::vector<double> out(r * c, 0.0);
  const auto fv = fmap.data();
  for (std::size_t i = 0; i < r; ++i)
    for (int t = 0; t < 4; ++t) {
      if (taps[i].at[t] < 0) continue;
      const auto off = static_cast<std::size_t>(taps[i].at[t]);
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += taps[i].wt[t] * fv[ch * plane + off];
    }
  return make_result({r, c}, std::move(out), {fmap, points},
                     [taps = std::move(taps), c, plane, r](Node& self) {
                       const auto& fval = self.parents[0]->value;
                       if (self.parents[0]->requires_grad) {
                         auto& gf = self.parents[0]->grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (int t = 0; t < 4; ++t) {
                             if (taps[i].at[t] < 0) continue;
                             const auto off = static_cast<std::size_t>(taps[i].at[t]);
                             for (std::size_t ch = 0; ch < c; ++ch)
                               gf[ch * plane + off] += taps[i].wt[t] * self.grad[i * c + ch];
                           }
                       }
                       if (self.parents[1]->requires_grad) {
                         auto& gp = self.parents[1]->grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (int t = 0; t < 4; ++t) {
                             if (taps[i].at[t] < 0) continue;
                             const auto off = static_cast<std::size_t>(taps[i].at[t]);
                             double dot = 0;
                             for (std::size_t ch = 0; ch < c; ++ch) dot += self.grad[i * c + ch] * fval[ch * plane + off];
                             gp[2 * i] += taps[i].dwx[t] * dot;
                             gp[2 * i + 1] += taps[i].dwy[t] * dot;
                           }
                       }
                     });
}

std::vector<Tensor> AttentionParams::parameters() const {
  return {offset_weight, offset_bias, score_weight, score_bias, value_weight};
}

AttentionParams AttentionParams::init(std::size_t d, std::size_t channels, std::size_t points, Rng& rng) {
  if (points < 1) throw ParameterError("n_points must be >= 1");
  AttentionParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  // Small learned offsets around a fixed ring of initial directions.
  p.offset_weight = uniform_leaf({2 * points, d}, 0.01 * bound, rng);
  std::vector<double> ring(2 * points);
  for (std::size_t k = 0; k < points; ++k) {
    const double angle = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(points);
    ring[2 * k] = 0.03 * std::cos(angle);
    ring[2 * k + 1] = 0.03 * std::sin(angle);
  }
  p.offset_bias = Tensor({2 * points}, std::move(ring), true);
  p.score_weight = uniform_leaf({points, d}, bound, rng);
  p.score_bias = Tensor::zeros({points}, true);
  p.value_weight = uniform_leaf({d, channels}, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
  return p;
}

AttentionResult deformable_cross_attention(const Tensor& base, const Tensor& refined,
                                           const Tensor& hit, const scene::FeatureMaps& fmaps,
                                           const scene::HitSet& hits, const AttentionParams& params,
                                           std::size_t grid_h, std::size_t grid_w) {
  const std::size_t n = hits.num_views(), k = hits.capacity, pts = params.points();
  if (base.rank() != 2) throw DimensionError("attention base grid must be [cells, d]");
  const std::size_t cells = base.size(0), d = base.size(1);
  require_shape(refined, {n, k, d}, "attention refined queries");
  require_shape(hit, {n, k, d}, "attention hit queries");
  if (fmaps.features.rank() != 4 || fmaps.views() != n)
    throw DimensionError("feature maps do not match the hit set view count");
  const std::size_t c = fmaps.channels();
  require_shape(params.value_weight, {d, c}, "attention value projection");
  if (grid_h == 0 || grid_w == 0) throw ParameterError("salience grid must be non-empty");

  const Tensor offsets = ops::linear(refined, params.offset_weight, params.offset_bias);  // [N,K,2P]
  const Tensor weights = ops::softmax(ops::linear(refined, params.score_weight, params.score_bias));

  // Sampling points: projected centre plus learned offset.
  std::vector<double> centres(n * k * 2 * pts);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t s = 0; s < k; ++s) {
      const auto& slot = hits.views[v][s];
      for (std::size_t p = 0; p < pts; ++p) {
        centres[((v * k + s) * pts + p) * 2] = slot.qx;
        centres[((v * k + s) * pts + p) * 2 + 1] = slot.qy;
      }
    }
  const Tensor locations = ops::add(offsets, constant({n, k, 2 * pts}, centres));

  std::vector<Tensor> attended;
  for (std::size_t v = 0; v < n; ++v) {
    const Tensor samples = bilinear_sample(ops::select(fmaps.features, v),
                                           ops::reshape(ops::select(locations, v), {k * pts, 2}));
    const Tensor weighted = ops::scale_rows(ops::reshape(samples, {k, pts, c}), ops::select(weights, v));
    const std::array<std::size_t, 3> axes{0, 2, 1};
    attended.push_back(ops::sum_last(ops::permute(weighted, axes)));  // [K, C]
  }
  const Tensor out = ops::linear(ops::stack(attended), params.value_weight, Tensor());  // [N,K,d]

  std::vector<double> row_valid(n * k * d);
  std::vector<std::size_t> targets(n * k);
  std::vector<double> hit_count(cells, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t s = 0; s < k; ++s) {
      const auto& slot = hits.views[v][s];
      targets[v * k + s] = slot.valid ? slot.query_index : 0;
      if (slot.valid) {
        hit_count[slot.query_index] += 1;
        std::fill_n(row_valid.begin() + static_cast<std::ptrdiff_t>((v * k + s) * d), d, 1.0);
      }
    }
  const Tensor delta = ops::mask(ops::add(ops::sub(refined, hit), out), row_valid);
  std::vector<double> inv_count(cells);
  for (std::size_t q = 0; q < cells; ++q) inv_count[q] = hit_count[q] > 0 ? 1.0 / hit_count[q] : 0.0;
  const Tensor summed = ops::scatter_add_rows(ops::reshape(delta, {n * k, d}), targets, cells);

  AttentionResult result;
  result.queries = ops::add(base, ops::scale_rows(summed, constant({cells}, std::move(inv_count))));
  result.weights = weights;
  result.locations.assign(locations.data().begin(), locations.data().end());

  // Salience: scatter each in-bounds point's weight into its floor cell.
  const std::size_t cells2d = grid_h * grid_w;
  std::vector<std::size_t> bins(n * k * pts);
  std::vector<double> keep(n * k * pts, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t s = 0; s < k; ++s)
      for (std::size_t p = 0; p < pts; ++p) {
        const std::size_t i = (v * k + s) * pts + p;
        const double x = result.locations[2 * i], y = result.locations[2 * i + 1];
        bins[i] = v * cells2d;
        if (!hits.views[v][s].valid || !(x >= 0 && x < 1 && y >= 0 && y < 1)) continue;
        const auto cx = std::min(grid_w - 1, static_cast<std::size_t>(x * static_cast<double>(grid_w)));
        const auto cy = std::min(grid_h - 1, static_cast<std::size_t>(y * static_cast<double>(grid_h)));
        bins[i] = v * cells2d + cy * grid_w + cx;
        keep[i] = 1.0;
      }
  const Tensor masked = ops::mask(ops::reshape(weights, {n * k * pts, 1}), keep);
  result.salience = ops::reshape(ops::scatter_add_rows(masked, bins, n * cells2d), {n, cells2d});
  return result;
}

void EncoderConfig::validate() const {
  if (extents[0] == 0 || extents[1] == 0 || extents[2] == 0) throw ConfigError("query grid extents must be positive");
  if (d == 0 || channels == 0) throw ConfigError("d and feature channels must be positive");
  if (points < 1) throw ConfigError("n_points must be >= 1");
  if (!(eps > 0)) throw ConfigError("eps must be > 0");
  if (grid_h == 0 || grid_w == 0) throw ConfigError("salience grid must be non-empty");
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out{query};
  for (const auto& l : layers) {
    for (auto& t : l.projection.parameters()) out.push_back(t);
    for (auto& t : l.dispatch.parameters()) out.push_back(t);
    for (auto& t : l.attention.parameters()) out.push_back(t);
  }
  return out;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  const std::size_t cells = cfg.extents[0] * cfg.extents[1] * cfg.extents[2];
  std::vector<double> q(cells * cfg.d);
  for (auto& x : q) x = 0.5 * rng.normal();
  p.query = Tensor({cells, cfg.d}, std::move(q), true);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams layer;
    layer.projection = MlpParams::init({cfg.channels, cfg.d, cfg.d}, {Activation::relu, Activation::identity}, rng);
    layer.dispatch = MlpParams::init({cfg.d, cfg.d, cfg.d}, {Activation::relu, Activation::identity}, rng);
    // The message sums over all M prototypes, so it starts switched off and
    // the residual path carries the query until the MLP learns a scale.
    auto last = layer.dispatch.layers.back().weight.data_mut();
    std::fill(last.begin(), last.end(), 0.0);
    layer.attention = AttentionParams::init(cfg.d, cfg.channels, cfg.points, rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

EncodeOutput encode(const scene::FeatureMaps& fmaps, const Tensor& protos,
                    const scene::HitSet& hits, const EncoderParams& params,
                    const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t cells = cfg.extents[0] * cfg.extents[1] * cfg.extents[2];
  require_shape(params.query, {cells, cfg.d}, "encoder query grid");
  if (params.layers.size() < cfg.layers)
    throw DimensionError("encoder has " + std::to_string(params.layers.size()) + " layers, config wants " +
                         std::to_string(cfg.layers));
  std::vector<double> valid;
  for (std::size_t v = 0; v < hits.num_views(); ++v) {
    const auto m = hits.valid_mask(v);
    valid.insert(valid.end(), m.begin(), m.end());
  }

  EncodeOutput out;
  Tensor grid = params.query;
  const bool need_protos = cfg.prototype_mapping || cfg.keep_prototypes;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& layer = params.layers[l];
    const Tensor hit = gather_hits(grid, hits);
    Tensor refined = hit;
    if (need_protos) {
      const Tensor projected = mlp_forward(layer.projection, protos);
      out.affinity = compute_affinity(projected, hit, valid);
      out.voxel_protos = aggregate(projected, hit, out.affinity, cfg.eps);
      if (cfg.prototype_mapping) refined = dispatch(hit, out.affinity, out.voxel_protos, layer.dispatch);
    }
    auto att = deformable_cross_attention(grid, refined, hit, fmaps, hits, layer.attention, cfg.grid_h, cfg.grid_w);
    grid = att.queries;
    out.salience = att.salience;
    out.attention_weights = att.weights;
  }
  out.queries = grid;
  return out;
}

}  // namespace protoocc::view
