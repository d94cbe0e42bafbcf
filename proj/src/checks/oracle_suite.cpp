// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <functional>

#include "checks.hpp"
#include "instances.hpp"
#include "protoocc/decoder.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/proto_opt.hpp"
#include "protoocc/view_transform.hpp"

namespace protoocc::checks {

namespace {

constexpr double kTolerance = 1e-10;

// Naive references: plain loops over flat row-major arrays.

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ref_cosine(const double* a, const double* b, std::size_t d) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// sigma(cos) on valid slots, 0 elsewhere; [N, M, K].
std::vector<double> ref_gate(const std::vector<double>& protos, const std::vector<double>& queries,
                             const std::vector<double>& valid, std::size_t n, std::size_t m, std::size_t k,
                             std::size_t d) {
  std::vector<double> g(n * m * k, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (valid[v * k + j] != 0)
          g[(v * m + i) * k + j] = ref_sigmoid(ref_cosine(&protos[(v * m + i) * d], &queries[(v * k + j) * d], d));
  return g;
}

std::vector<double> ref_aggregate(const std::vector<double>& protos, const std::vector<double>& queries,
                                  const std::vector<double>& valid, std::size_t n, std::size_t m, std::size_t k,
                                  std::size_t d, double eps) {
  const auto g = ref_gate(protos, queries, valid, n, m, k, d);
  std::vector<double> out(n * m * d);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t i = 0; i < m; ++i) {
      double r = 0;
      for (std::size_t j = 0; j < k; ++j) r += g[(v * m + i) * k + j];
      for (std::size_t c = 0; c < d; ++c) {
        double num = protos[(v * m + i) * d + c];
        for (std::size_t j = 0; j < k; ++j) num += g[(v * m + i) * k + j] * queries[(v * k + j) * d + c];
        out[(v * m + i) * d + c] = num / (eps + r);
      }
    }
  return out;
}

std::vector<double> ref_mlp(const MlpParams& mlp, std::vector<double> x, std::size_t rows) {
  for (const auto& layer : mlp.layers) {
    const std::size_t out_dim = layer.weight.size(0), in_dim = layer.weight.size(1);
    std::vector<double> y(rows * out_dim);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out_dim; ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < in_dim; ++i) s += layer.weight[o * in_dim + i] * x[r * in_dim + i];
        y[r * out_dim + o] = layer.activation == Activation::relu ? std::max(0.0, s) : s;
      }
    x = std::move(y);
  }
  return x;
}

std::vector<double> ref_dispatch(const std::vector<double>& protos, const std::vector<double>& queries,
                                 const std::vector<double>& voxel, const std::vector<double>& valid,
                                 const MlpParams& mlp, std::size_t n, std::size_t m, std::size_t k, std::size_t d) {
  const auto g = ref_gate(protos, queries, valid, n, m, k, d);
  std::vector<double> message(n * k * d, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < m; ++i)
          message[(v * k + j) * d + c] += g[(v * m + i) * k + j] * voxel[(v * m + i) * d + c];
  const auto update = ref_mlp(mlp, message, n * k);
  std::vector<double> out = queries;
  for (std::size_t r = 0; r < n * k; ++r)
    if (valid[r] != 0)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += update[r * d + c];
  return out;
}

std::vector<double> ref_map(const std::vector<double>& values, const scene::HitSet& hits, std::size_t n,
                            std::size_t m, std::size_t k, std::size_t gh, std::size_t gw) {
  std::vector<double> out(n * m * gh * gw, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t j = 0; j < k; ++j) {
      const auto& s = hits.views[v][j];
      if (!s.valid) continue;
      const long col = static_cast<long>(std::floor(s.qx * static_cast<double>(gw)));
      const long row = static_cast<long>(std::floor(s.qy * static_cast<double>(gh)));
      if (col < 0 || row < 0 || col >= static_cast<long>(gw) || row >= static_cast<long>(gh)) continue;
      for (std::size_t i = 0; i < m; ++i)
        out[(v * m + i) * gh * gw + static_cast<std::size_t>(row) * gw + static_cast<std::size_t>(col)] +=
            values[(v * m + i) * k + j];
    }
  return out;
}

std::vector<double> ref_pixel_features(const std::vector<double>& g, const std::vector<double>& ha,
                                       const std::vector<double>& voxel, std::size_t n, std::size_t m,
                                       std::size_t d, std::size_t cells) {
  std::vector<double> out(n * d * cells, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t p = 0; p < cells; ++p)
        for (std::size_t i = 0; i < m; ++i)
          out[(v * d + c) * cells + p] += g[v * cells + p] * ha[(v * m + i) * cells + p] * voxel[(v * m + i) * d + c];
  return out;
}

double ref_contrastive(const std::vector<double>& x, const clustering::PseudoMaskSet& masks, std::size_t n,
                       std::size_t d, std::size_t pixels, double tau) {
  const std::size_t s = masks.num_masks;
  double total = 0;
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> centroid(s * d, 0.0);
    std::vector<std::size_t> count(s, 0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const auto id = static_cast<std::size_t>(masks.ids[v][p]);
      ++count[id];
      for (std::size_t c = 0; c < d; ++c) centroid[id * d + c] += x[(v * d + c) * pixels + p];
    }
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t c = 0; c < d; ++c)
        if (count[i]) centroid[i * d + c] /= static_cast<double>(count[i]);
    std::vector<double> pixel(d);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < d; ++c) pixel[c] = x[(v * d + c) * pixels + p];
      double num = 0, den = 0;
      for (std::size_t i = 0; i < s; ++i) {
        if (!count[i]) continue;
        const double e = std::exp(ref_cosine(pixel.data(), &centroid[i * d], d) / tau);
        den += e;
        if (static_cast<std::size_t>(masks.ids[v][p]) == i) num += e;
      }
      total += -std::log(num / den);
    }
  }
  return total;
}

double ref_consistency(const std::vector<std::vector<double>>& branches, std::size_t cells, std::size_t l,
                       double tau) {
  double total = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    std::vector<double> sharp(l, 0.0);
    double z = 0;
    for (std::size_t c = 0; c < l; ++c) {
      double mean = 0;
      for (const auto& b : branches) mean += b[i * l + c];
      mean /= static_cast<double>(branches.size());
      sharp[c] = std::pow(mean, 1.0 / tau);
      z += sharp[c];
    }
    for (const auto& b : branches)
      for (std::size_t c = 0; c < l; ++c) total += std::pow(sharp[c] / z - b[i * l + c], 2);
  }
  return total / static_cast<double>(cells * branches.size());
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Absolute below magnitude 1, relative above: an empty row divided by eps = 1e-6
// yields values near 1e6 whose last bits legitimately differ.
double scaled_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, scaled_diff(a[i], b[i]));
  return m;
}

using Instance = std::function<double(Rng&)>;

double aggregate_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8), d = pick(rng, 1, 4);
  const double eps = rng.uniform() < 0.5 ? 1e-6 : rng.uniform(0.01, 1.0);
  const auto valid = valid_flags(random_hits(n, k, 4, rng));
  const Tensor p = random_tensor({n, m, d}, rng), q = random_tensor({n, k, d}, rng);
  const auto got = view::aggregate(p, q, view::compute_affinity(p, q, valid), eps);
  return max_abs_diff(got.data(), ref_aggregate(values(p), values(q), valid, n, m, k, d, eps));
}

double dispatch_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8), d = pick(rng, 1, 4);
  const auto valid = valid_flags(random_hits(n, k, 4, rng));
  const Tensor p = random_tensor({n, m, d}, rng), q = random_tensor({n, k, d}, rng),
               voxel = random_tensor({n, m, d}, rng);
  const auto mlp = random_mlp(d, rng);
  const auto got = view::dispatch(q, view::compute_affinity(p, q, valid), voxel, mlp);
  return max_abs_diff(got.data(), ref_dispatch(values(p), values(q), values(voxel), valid, mlp, n, m, k, d));
}

double mapping_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8);
  const auto gh = pick(rng, 1, 5), gw = pick(rng, 1, 5);
  const auto hits = random_hits(n, k, 4, rng);
  const Tensor a = random_tensor({n, m, k}, rng);
  return max_abs_diff(proto::map_affinity_to_grid(a, hits, gh, gw).data(), ref_map(values(a), hits, n, m, k, gh, gw));
}

double pixel_features_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), d = pick(rng, 1, 4);
  const auto gh = pick(rng, 1, 5), gw = pick(rng, 1, 5);
  const Tensor g = random_tensor({n, gh * gw}, rng), ha = random_tensor({n, m, gh * gw}, rng),
               voxel = random_tensor({n, m, d}, rng);
  return max_abs_diff(proto::prototype_pixel_features(g, ha, voxel, gh, gw).data(),
                      ref_pixel_features(values(g), values(ha), values(voxel), n, m, d, gh * gw));
}

double contrastive_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), d = pick(rng, 1, 4), s = pick(rng, 1, 4);
  const auto h = pick(rng, 1, 5), w = pick(rng, 1, 5);
  const double tau = rng.uniform(0.1, 1.0);
  const auto masks = random_masks(n, h, w, s, rng);
  const Tensor x = random_tensor({n, d, h, w}, rng);
  const double got = proto::contrastive_loss(x, proto::mask_centroids(x, masks), masks, tau).item();
  return scaled_diff(got, ref_contrastive(values(x), masks, n, d, h * w, tau));
}

double consistency_instance(Rng& rng) {
  const auto branches = pick(rng, 1, 4), cells = pick(rng, 1, 8), l = pick(rng, 2, 5);
  const double tau = rng.uniform(0.1, 1.0);
  std::vector<Tensor> probs;
  std::vector<std::vector<double>> raw;
  for (std::size_t b = 0; b < branches; ++b) {
    probs.push_back(ops::softmax(random_tensor({cells, l}, rng, false, 2.0)));
    raw.push_back(values(probs.back()));
  }
  return scaled_diff(decoder::consistency_loss(probs, tau).item(), ref_consistency(raw, cells, l, tau));
}

const std::vector<std::pair<std::string, Instance>>& registry() {
  static const std::vector<std::pair<std::string, Instance>> ops = {
      {"aggregate", aggregate_instance},
      {"dispatch", dispatch_instance},
      {"map_affinity_to_grid", mapping_instance},
      {"prototype_pixel_features", pixel_features_instance},
      {"contrastive_loss", contrastive_instance},
      {"consistency_loss", consistency_instance},
  };
  return ops;
}

}  // namespace

std::vector<std::string> oracle_ops() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : registry()) out.push_back(name);
  return out;
}

std::vector<CheckResult> run_oracle_suite(std::size_t instances, std::uint64_t seed, const std::string& only) {
  NoGradGuard no_grad;
  std::vector<CheckResult> out;
  const Rng root(seed);
  for (const auto& [name, fn] : registry()) {
    if (!only.empty() && only != name) continue;
    Stopwatch clock;
    Rng rng = root.split(name);
    CheckResult r{"oracle." + name, 0, 0, kTolerance, 0};
    for (std::size_t i = 0; i < instances; ++i, ++r.instances) r.max_error = std::max(r.max_error, fn(rng));
    r.seconds = clock.seconds();
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError("unknown oracle check '" + only + "'");
  return out;
}

}  // namespace protoocc::checks
