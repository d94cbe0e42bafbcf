// SPDX-License-Identifier: Apache-2.0
#include "protoocc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protoocc/errors.hpp"
#include "protoocc/rng.hpp"

namespace protoocc::clustering {
namespace {

struct MapView {
  std::size_t views, d, h, w;
  std::span<const double> data;

  double at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
    return data[((n * d + c) * h + i) * w + j];
  }
};

MapView view_of(const Tensor& fmap) {
  if (!fmap.defined()) throw DimensionError("feature map is undefined");
  const auto& s = fmap.shape();
  if (s.size() == 3) return {1, s[0], s[1], s[2], fmap.data()};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], fmap.data()};
  throw DimensionError("feature map must be [d,h,w] or [N,d,h,w], got " + shape_str(s));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

PrototypeSet2D init_prototypes(const Tensor& fmap, std::size_t ratio) {
  if (ratio < 1) throw ParameterError("prototype downsample ratio must be >= 1");
  const auto m = view_of(fmap);
  PrototypeSet2D out;
  out.ratio = ratio;
  out.grid_h = ceil_div(m.h, ratio);
  out.grid_w = ceil_div(m.w, ratio);
  const std::size_t count = out.count();
  std::vector<double> values(m.views * count * m.d, 0.0);
  std::vector<double> cell_pixels(count, 0.0);
  for (std::size_t i = 0; i < m.h; ++i)
    for (std::size_t j = 0; j < m.w; ++j) cell_pixels[(i / ratio) * out.grid_w + j / ratio] += 1;
  for (std::size_t n = 0; n < m.views; ++n)
    for (std::size_t c = 0; c < m.d; ++c)
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.w; ++j) {
          const std::size_t p = (i / ratio) * out.grid_w + j / ratio;
          values[(n * count + p) * m.d + c] += m.at(n, c, i, j);
        }
  for (std::size_t n = 0; n < m.views; ++n)
    for (std::size_t p = 0; p < count; ++p)
      for (std::size_t c = 0; c < m.d; ++c) values[(n * count + p) * m.d + c] /= cell_pixels[p];
  out.features = Tensor({m.views, count, m.d}, std::move(values));
  return out;
}

PrototypeSet2D iterate_prototypes(const Tensor& fmap, const PrototypeSet2D& protos,
                                  std::size_t iters, double assign_tau) {
  if (!(assign_tau > 0)) throw ParameterError("assign_tau must be > 0");
  const auto m = view_of(fmap);
  const std::size_t count = protos.count();
  if (protos.ratio < 1 || protos.grid_h != ceil_div(m.h, protos.ratio) ||
      protos.grid_w != ceil_div(m.w, protos.ratio) ||
      protos.features.shape() != Shape{m.views, count, m.d})
    throw DimensionError("prototype set " + shape_str(protos.features.shape()) +
                         " does not match feature map " + shape_str(fmap.shape()));

  PrototypeSet2D out = protos;
  std::vector<double> current(protos.features.data().begin(), protos.features.data().end());
  std::vector<double> pixel(m.d), acc(count * m.d), mass(count);
  std::vector<std::size_t> cand;
  std::vector<double> logits;

  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> next = current;
    for (std::size_t n = 0; n < m.views; ++n) {
      std::fill(acc.begin(), acc.end(), 0.0);
      std::fill(mass.begin(), mass.end(), 0.0);
      const std::span<const double> view_protos(current.data() + n * count * m.d, count * m.d);
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.w; ++j) {
          for (std::size_t c = 0; c < m.d; ++c) pixel[c] = m.at(n, c, i, j);
          const auto u = static_cast<std::ptrdiff_t>(i / protos.ratio);
          const auto v = static_cast<std::ptrdiff_t>(j / protos.ratio);
          cand.clear();
          logits.clear();
          for (std::ptrdiff_t du = -1; du <= 1; ++du)
            for (std::ptrdiff_t dv = -1; dv <= 1; ++dv) {
              const auto uu = u + du, vv = v + dv;
              if (uu < 0 || vv < 0 || uu >= static_cast<std::ptrdiff_t>(protos.grid_h) ||
                  vv >= static_cast<std::ptrdiff_t>(protos.grid_w))
                continue;
              const auto p = static_cast<std::size_t>(uu) * protos.grid_w + static_cast<std::size_t>(vv);
              cand.push_back(p);
              logits.push_back(cosine(pixel, view_protos.subspan(p * m.d, m.d)) / assign_tau);
            }
          const double top = *std::max_element(logits.begin(), logits.end());
          double z = 0;
          for (auto& l : logits) z += (l = std::exp(l - top));
          for (std::size_t k = 0; k < cand.size(); ++k) {
            const double wgt = logits[k] / z;
            mass[cand[k]] += wgt;
            for (std::size_t c = 0; c < m.d; ++c) acc[cand[k] * m.d + c] += wgt * pixel[c];
          }
        }
      for (std::size_t p = 0; p < count; ++p) {
        if (mass[p] < 1e-12) continue;  // unassigned: keep previous value
        for (std::size_t c = 0; c < m.d; ++c)
          next[(n * count + p) * m.d + c] = acc[p * m.d + c] / mass[p];
      }
    }
    current = std::move(next);
  }
  out.features = Tensor({m.views, count, m.d}, std::move(current));
  return out;
}

std::string to_string(MaskGenerator g) {
  return g == MaskGenerator::grid_kmeans ? "grid-kmeans" : "ground-truth";
}

MaskGenerator mask_generator_from_string(const std::string& name) {
  if (name == "grid-kmeans") return MaskGenerator::grid_kmeans;
  if (name == "ground-truth") return MaskGenerator::ground_truth;
  throw ConfigError("unknown mask generator '" + name + "' (expected grid-kmeans or ground-truth)");
}

std::vector<std::size_t> PseudoMaskSet::counts(std::size_t view) const {
  std::vector<std::size_t> c(num_masks, 0);
  for (auto id : ids.at(view)) ++c.at(static_cast<std::size_t>(id));
  return c;
}

std::vector<std::int32_t> resize_nearest(std::span<const std::int32_t> ids, std::size_t h,
                                         std::size_t w, std::size_t out_h, std::size_t out_w) {
  if (ids.size() != h * w) throw DimensionError("id map size does not match its extents");
  if (out_h == 0 || out_w == 0) throw ParameterError("target mask shape must be positive");
  std::vector<std::int32_t> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto si = std::min(h - 1, static_cast<std::size_t>((i + 0.5) * static_cast<double>(h) / out_h));
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto sj = std::min(w - 1, static_cast<std::size_t>((j + 0.5) * static_cast<double>(w) / out_w));
      out[i * out_w + j] = ids[si * w + sj];
    }
  }
  return out;
}

std::size_t relabel_components(std::vector<std::int32_t>& ids, std::size_t h, std::size_t w) {
  std::vector<std::int32_t> out(ids.size(), -1);
  std::vector<std::size_t> stack;
  std::int32_t next = 0;
  for (std::size_t start = 0; start < ids.size(); ++start) {
    if (out[start] >= 0) continue;
    out[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t i = p / w, j = p % w;
      auto visit = [&](std::size_t q) {
        if (out[q] < 0 && ids[q] == ids[start]) {
          out[q] = next;
          stack.push_back(q);
        }
      };
      if (i > 0) visit(p - w);
      if (i + 1 < h) visit(p + w);
      if (j > 0) visit(p - 1);
      if (j + 1 < w) visit(p + 1);
    }
    ++next;
  }
  ids = std::move(out);
  return static_cast<std::size_t>(next);
}

std::size_t merge_small_components(std::vector<std::int32_t>& ids, std::size_t h, std::size_t w,
                                   std::size_t min_size) {
  std::size_t count = relabel_components(ids, h, w);
  for (;;) {
    std::vector<std::size_t> size(count, 0);
    for (auto id : ids) ++size[static_cast<std::size_t>(id)];
    // First undersized region in raster order joins its largest neighbour.
    std::int32_t small = -1, into = -1;
    for (std::size_t s = 0; s < count && small < 0; ++s) {
      if (size[s] >= min_size) continue;
      std::size_t best = 0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          if (ids[i * w + j] != static_cast<std::int32_t>(s)) continue;
          const std::int32_t around[4] = {i > 0 ? ids[(i - 1) * w + j] : -1, i + 1 < h ? ids[(i + 1) * w + j] : -1,
                                          j > 0 ? ids[i * w + j - 1] : -1, j + 1 < w ? ids[i * w + j + 1] : -1};
          for (auto t : around)
            if (t >= 0 && t != static_cast<std::int32_t>(s) && size[static_cast<std::size_t>(t)] > best) {
              best = size[static_cast<std::size_t>(t)];
              into = t;
            }
        }
      if (into >= 0) small = static_cast<std::int32_t>(s);
    }
    if (small < 0) return count;
    for (auto& id : ids)
      if (id == small) id = into;
    count = relabel_components(ids, h, w);
  }
}

PseudoMaskSet grid_kmeans_masks(const Tensor& fmaps, std::size_t out_h, std::size_t out_w,
                                std::size_t target, std::uint64_t seed) {
  if (target < 1 || target > out_h * out_w)
    throw ParameterError("S_target must lie in [1, h'*w'] = [1, " + std::to_string(out_h * out_w) + "]");
  const auto m = view_of(fmaps);
  if (target > m.h * m.w) throw ParameterError("S_target exceeds the feature map pixel count");

  // Most square factorisation sh * sw = target, oriented like the image.
  std::size_t sh = 1;
  for (std::size_t a = 1; a * a <= target; ++a)
    if (target % a == 0) sh = a;
  std::size_t sw = target / sh;
  if ((m.h > m.w) != (sh > sw)) std::swap(sh, sw);
  if (sh > m.h || sw > m.w) std::swap(sh, sw);

  PseudoMaskSet out;
  out.height = out_h;
  out.width = out_w;
  out.generator = MaskGenerator::grid_kmeans;
  Rng root(seed);
  std::vector<double> centers(target * m.d), sums(target * m.d), pixel(m.d);
  std::vector<std::size_t> members(target);
  std::vector<std::int32_t> assign(m.h * m.w);
  for (std::size_t n = 0; n < m.views; ++n) {
    Rng rng = root.split(n);
    for (std::size_t a = 0; a < sh; ++a)
      for (std::size_t b = 0; b < sw; ++b) {
        // Jitter within the middle half of each seed cell.
        const double fi = (a + 0.25 + 0.5 * rng.uniform()) * static_cast<double>(m.h) / sh;
        const double fj = (b + 0.25 + 0.5 * rng.uniform()) * static_cast<double>(m.w) / sw;
        const auto i = std::min(m.h - 1, static_cast<std::size_t>(fi));
        const auto j = std::min(m.w - 1, static_cast<std::size_t>(fj));
        for (std::size_t c = 0; c < m.d; ++c) centers[(a * sw + b) * m.d + c] = m.at(n, c, i, j);
      }
    for (int iter = 0; iter < 10; ++iter) {
      std::fill(sums.begin(), sums.end(), 0.0);
      std::fill(members.begin(), members.end(), 0);
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.w; ++j) {
          for (std::size_t c = 0; c < m.d; ++c) pixel[c] = m.at(n, c, i, j);
          // Superpixel-style locality: only seeds of the 3x3 block of seed
          // cells around the pixel compete for it.
          const std::size_t ca = i * sh / m.h, cb = j * sw / m.w;
          std::size_t best = ca * sw + cb;
          double best_sim = -std::numeric_limits<double>::infinity();
          for (std::size_t a = ca ? ca - 1 : 0; a <= std::min(sh - 1, ca + 1); ++a)
            for (std::size_t b = cb ? cb - 1 : 0; b <= std::min(sw - 1, cb + 1); ++b) {
              const std::size_t k = a * sw + b;
              const double s = cosine(pixel, std::span<const double>(centers).subspan(k * m.d, m.d));
              if (s > best_sim) {
                best_sim = s;
                best = k;
              }
            }
          assign[i * m.w + j] = static_cast<std::int32_t>(best);
          ++members[best];
          for (std::size_t c = 0; c < m.d; ++c) sums[best * m.d + c] += pixel[c];
        }
      for (std::size_t k = 0; k < target; ++k)
        if (members[k] > 0)
          for (std::size_t c = 0; c < m.d; ++c)
            centers[k * m.d + c] = sums[k * m.d + c] / static_cast<double>(members[k]);
    }
    auto ids = resize_nearest(assign, m.h, m.w, out_h, out_w);
    relabel_components(ids, out_h, out_w);
    const std::size_t s = merge_small_components(ids, out_h, out_w, std::max<std::size_t>(1, out_h * out_w / (4 * target)));
    out.num_masks = std::max(out.num_masks, s);
    out.ids.push_back(std::move(ids));
  }
  return out;
}

PseudoMaskSet ground_truth_masks(const scene::GroundTruthMasks& masks, std::size_t out_h,
                                 std::size_t out_w, std::size_t target) {
  if (target < 1 || target > out_h * out_w)
    throw ParameterError("S_target must lie in [1, h'*w'] = [1, " + std::to_string(out_h * out_w) + "]");
  PseudoMaskSet out;
  out.height = out_h;
  out.width = out_w;
  out.generator = MaskGenerator::ground_truth;
  out.num_masks = 1;
  for (const auto& v : masks.ids) {
    auto ids = resize_nearest(v, masks.height, masks.width, out_h, out_w);
    for (auto id : ids) {
      if (id < 0) throw DataError("ground-truth mask ids must be non-negative");
      out.num_masks = std::max(out.num_masks, static_cast<std::size_t>(id) + 1);
    }
    out.ids.push_back(std::move(ids));
  }
  return out;
}

}  // namespace protoocc::clustering
