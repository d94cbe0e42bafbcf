// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "checks.hpp"
#include "instances.hpp"
#include "protoocc/decoder.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/grad_check.hpp"
#include "protoocc/losses.hpp"
#include "protoocc/proto_opt.hpp"
#include "protoocc/view_transform.hpp"

namespace protoocc::checks {

namespace {

constexpr double kTolerance = 1e-4;
// Central-difference step: large enough that rounding in f stays well under the
// tolerance for small gradient entries, small enough for the O(h^2) truncation.
constexpr double kStep = 1e-5;

using Inputs = std::vector<Tensor>;
using Instance = std::function<double(Rng&)>;

double check(const ScalarFn& f, const Inputs& inputs) { return grad_check(f, inputs, kStep).max_rel_err; }

double aggregate_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8), d = pick(rng, 1, 4);
  // A view without valid slots divides by eps alone; the resulting ~1e6 terms
  // swamp the finite differences of the other view, so every view keeps one.
  const auto hits = random_hits(n, k, 4, rng, true);
  const auto valid = valid_flags(hits);
  const std::uint64_t probe = rng.next_u64();
  return check(
      [&](std::span<const Tensor> x) {
        const auto a = view::compute_affinity(x[0], x[1], valid);
        return weighted_sum(view::aggregate(x[0], x[1], a, 1e-6), probe);
      },
      {random_tensor({n, m, d}, rng, true), random_tensor({n, k, d}, rng, true)});
}

// Smallest |pre-activation| of the dispatch MLP's relu layer over valid slots.
double relu_margin(const Tensor& p, const Tensor& q, const Tensor& voxel, const std::vector<double>& valid,
                   const MlpParams& mlp) {
  NoGradGuard no_grad;
  const auto gate = view::gated_affinity(view::compute_affinity(p, q, valid));
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < p.size(0); ++v) {
    const Tensor message = ops::matmul(ops::transpose(ops::select(gate, v)), ops::select(voxel, v));
    const Tensor pre = ops::linear(message, mlp.layers[0].weight, mlp.layers[0].bias);
    const std::size_t k = q.size(1), h = pre.size(1);
    for (std::size_t j = 0; j < k; ++j)
      if (valid[v * k + j] != 0)
        for (std::size_t c = 0; c < h; ++c) margin = std::min(margin, std::abs(pre[j * h + c]));
  }
  return margin;
}

double dispatch_instance(Rng& rng) {
  for (;;) {
    const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8), d = pick(rng, 1, 4);
    const auto hits = random_hits(n, k, 4, rng);
    const auto valid = valid_flags(hits);
    const auto mlp = random_mlp(d, rng);
    const std::uint64_t probe = rng.next_u64();
    const Tensor p = random_tensor({n, m, d}, rng, true), q = random_tensor({n, k, d}, rng, true),
                 voxel = random_tensor({n, m, d}, rng, true);
    if (relu_margin(p, q, voxel, valid, mlp) < 1e-3) continue;  // relu kink within reach of the differences
    return check(
        [&](std::span<const Tensor> x) {
          const MlpParams net{{DenseLayer{x[3], x[4], Activation::relu}, DenseLayer{x[5], x[6], Activation::identity}}};
          const auto a = view::compute_affinity(x[0], x[1], valid);
          return weighted_sum(view::dispatch(x[1], a, x[2], net), probe);
        },
        {p, q, voxel, mlp.layers[0].weight, mlp.layers[0].bias, mlp.layers[1].weight, mlp.layers[1].bias});
  }
}

double mapping_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), k = pick(rng, 1, 8);
  const auto gh = pick(rng, 1, 4), gw = pick(rng, 1, 4);
  const auto hits = random_hits(n, k, 4, rng);
  const std::uint64_t probe = rng.next_u64();
  return check([&](std::span<const Tensor> x) { return weighted_sum(proto::map_affinity_to_grid(x[0], hits, gh, gw), probe); },
               {random_tensor({n, m, k}, rng, true)});
}

double pixel_features_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), m = pick(rng, 1, 4), d = pick(rng, 1, 4);
  const auto gh = pick(rng, 1, 4), gw = pick(rng, 1, 4);
  const std::uint64_t probe = rng.next_u64();
  return check(
      [&](std::span<const Tensor> x) {
        return weighted_sum(proto::prototype_pixel_features(x[0], x[1], x[2], gh, gw), probe);
      },
      {random_tensor({n, gh * gw}, rng, true), random_tensor({n, m, gh * gw}, rng, true),
       random_tensor({n, m, d}, rng, true)});
}

double contrastive_instance(Rng& rng) {
  const auto n = pick(rng, 1, 2), d = pick(rng, 1, 4), s = pick(rng, 1, 4);
  const auto h = pick(rng, 1, 4), w = pick(rng, 2, 4);
  const auto masks = random_masks(n, h, w, s, rng);
  const double tau = rng.uniform(0.2, 1.0);
  return check(
      [&](std::span<const Tensor> x) {
        return proto::contrastive_loss(x[0], proto::mask_centroids(x[0], masks), masks, tau);
      },
      {random_tensor({n, d, h, w}, rng, true)});
}

double consistency_instance(Rng& rng) {
  const auto branches = pick(rng, 2, 3), cells = pick(rng, 1, 6), l = pick(rng, 2, 4);
  const double tau = rng.uniform(0.2, 1.0);
  Inputs logits;
  std::vector<Tensor> probs;
  for (std::size_t b = 0; b < branches; ++b) {
    logits.push_back(random_tensor({cells, l}, rng, true));
    probs.push_back(ops::softmax(logits.back()));
  }
  // The target is a constant of the loss, so it stays fixed while differencing.
  const Tensor target = decoder::consistency_target(probs, tau);
  return check(
      [&](std::span<const Tensor> x) {
        std::vector<Tensor> p;
        for (const auto& t : x) p.push_back(ops::softmax(t));
        return decoder::consistency_loss_to(p, target);
      },
      logits);
}

std::vector<std::uint8_t> random_labels(std::size_t cells, std::size_t l, Rng& rng) {
  std::vector<std::uint8_t> labels(cells);
  for (auto& y : labels) y = static_cast<std::uint8_t>(rng.uniform_int(l));
  return labels;
}

double cross_entropy_instance(Rng& rng) {
  const auto cells = pick(rng, 1, 8), l = pick(rng, 2, 5);
  const auto labels = random_labels(cells, l, rng);
  std::vector<double> weights;
  if (rng.uniform() < 0.5)
    for (std::size_t c = 0; c < l; ++c) weights.push_back(rng.uniform(0.5, 2.0));
  return check([&](std::span<const Tensor> x) { return losses::occupancy_ce_loss(ops::softmax(x[0]), labels, weights); },
               {random_tensor({cells, l}, rng, true)});
}

double lovasz_instance(Rng& rng) {
  for (;;) {
    const auto cells = pick(rng, 2, 8), l = pick(rng, 2, 4);
    const auto labels = random_labels(cells, l, rng);
    const Tensor logits = random_tensor({cells, l}, rng, true);
    // Stay away from ties in the per-class error ordering, where the loss has kinks.
    const auto p = ops::softmax(logits).data();
    double gap = 1.0;
    for (std::size_t c = 0; c < l; ++c) {
      std::vector<double> err;
      for (std::size_t i = 0; i < cells; ++i) err.push_back(std::abs((labels[i] == c ? 1.0 : 0.0) - p[i * l + c]));
      std::sort(err.begin(), err.end());
      for (std::size_t i = 1; i < err.size(); ++i) gap = std::min(gap, err[i] - err[i - 1]);
    }
    if (gap < 1e-4) continue;
    return check([&](std::span<const Tensor> x) { return losses::lovasz_softmax_loss(ops::softmax(x[0]), labels); },
                 {logits});
  }
}

double conv_instance(Rng& rng) {
  for (;;) {
    decoder::ConvGeometry g;
    decoder::Extents in{};
    for (int a = 0; a < 3; ++a) {
      g.kernel[a] = pick(rng, 1, 3);
      g.stride[a] = pick(rng, 1, 2);
      g.padding[a] = pick(rng, 0, g.kernel[a] - 1);
      in[a] = pick(rng, 1, 3);
    }
    const auto out = (in[0] - 1) * g.stride[0] + g.kernel[0];
    if (out <= 2 * g.padding[0] || (in[1] - 1) * g.stride[1] + g.kernel[1] <= 2 * g.padding[1] ||
        (in[2] - 1) * g.stride[2] + g.kernel[2] <= 2 * g.padding[2])
      continue;
    const auto cin = pick(rng, 1, 2), cout = pick(rng, 1, 2);
    const std::uint64_t probe = rng.next_u64();
    return check(
        [&](std::span<const Tensor> x) { return weighted_sum(decoder::conv_transpose3d(x[0], x[1], x[2], g), probe); },
        {random_tensor({in[0], in[1], in[2], cin}, rng, true),
         random_tensor({g.kernel[0], g.kernel[1], g.kernel[2], cin, cout}, rng, true),
         random_tensor({cout}, rng, true)});
  }
}

// Distance from t to the nearest member of {offset + j / scale}, in units of 1 / scale.
double lattice_gap(double t, double scale, double offset) {
  const double u = t * scale - offset;
  return std::abs(u - std::round(u));
}

double attention_instance(Rng& rng) {
  for (;;) {
    const auto n = pick(rng, 1, 2), k = pick(rng, 1, 5), d = pick(rng, 1, 4), c = pick(rng, 1, 3);
    const auto points = pick(rng, 1, 3), cells = pick(rng, 2, 6);
    const auto gh = pick(rng, 1, 4), gw = pick(rng, 1, 4);
    const auto fh = pick(rng, 3, 6), fw = pick(rng, 3, 6);
    auto hits = random_hits(n, k, cells, rng);
    for (auto& view : hits.views)
      for (auto& s : view) {
        s.qx = rng.uniform(0.15, 0.85);
        s.qy = rng.uniform(0.15, 0.85);
      }
    auto params = view::AttentionParams::init(d, c, points, rng);
    for (auto& x : params.offset_weight.data_mut()) x *= 10;  // make offsets depend visibly on the query
    const scene::FeatureMaps fm{random_tensor({n, c, fh, fw}, rng), 0};
    const Tensor base = random_tensor({cells, d}, rng, true);
    const std::uint64_t p1 = rng.next_u64(), p2 = rng.next_u64();
    auto run = [&](std::span<const Tensor> x) {
      const view::AttentionParams p{x[1], x[2], x[3], x[4], x[5]};
      const Tensor hit = view::gather_hits(x[0], hits);
      const Tensor refined = ops::add(hit, ops::scale(ops::square(hit), 0.1));
      return view::deformable_cross_attention(x[0], refined, hit, fm, hits, p, gh, gw);
    };
    const Inputs inputs{base, params.offset_weight, params.offset_bias, params.score_weight, params.score_bias,
                        params.value_weight};
    // Sampling is piecewise smooth: kinks on pixel-centre lines, jumps at the
    // image border and at salience cell edges. Keep every point clear of them.
    bool clear = true;
    {
      NoGradGuard no_grad;
      const auto loc = run(inputs).locations;
      for (std::size_t i = 0; i + 1 < loc.size(); i += 2) {
        const double x = loc[i], y = loc[i + 1];
        clear = clear && lattice_gap(x, double(fw), 0.5) > 1e-3 && lattice_gap(y, double(fh), 0.5) > 1e-3 &&
                lattice_gap(x, double(gw), 0.0) > 1e-3 && lattice_gap(y, double(gh), 0.0) > 1e-3 &&
                lattice_gap(x, 1.0, 0.0) > 1e-3 && lattice_gap(y, 1.0, 0.0) > 1e-3;
      }
    }
    if (!clear) continue;
    return check(
        [&](std::span<const Tensor> x) {
          const auto r = run(x);
          return ops::add(weighted_sum(r.queries, p1), weighted_sum(r.salience, p2));
        },
        inputs);
  }
}

const std::vector<std::pair<std::string, Instance>>& registry() {
  static const std::vector<std::pair<std::string, Instance>> ops = {
      {"aggregate", aggregate_instance},
      {"dispatch", dispatch_instance},
      {"map_affinity_to_grid", mapping_instance},
      {"prototype_pixel_features", pixel_features_instance},
      {"contrastive_loss", contrastive_instance},
      {"consistency_loss", consistency_instance},
      {"occupancy_ce_loss", cross_entropy_instance},
      {"lovasz_softmax_loss", lovasz_instance},
      {"conv_transpose3d", conv_instance},
      {"deformable_attention", attention_instance},
  };
  return ops;
}

}  // namespace

std::vector<std::string> gradient_ops() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : registry()) out.push_back(name);
  return out;
}

std::vector<CheckResult> run_gradient_suite(std::size_t instances, std::uint64_t seed, const std::string& only) {
  std::vector<CheckResult> out;
  const Rng root(seed);
  for (const auto& [name, fn] : registry()) {
    if (!only.empty() && only != name) continue;
    Stopwatch clock;
    Rng rng = root.split(name);
    CheckResult r{"grad." + name, 0, 0, kTolerance, 0};
    for (std::size_t i = 0; i < instances; ++i, ++r.instances) r.max_error = std::max(r.max_error, fn(rng));
    r.seconds = clock.seconds();
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError("unknown gradient check '" + only + "'");
  return out;
}

std::string format_result(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s: %zu instances, max error %.3e (tolerance %.0e), %.2f s",
                r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.instances, r.max_error, r.tolerance, r.seconds);
  return buf;
}

}  // namespace protoocc::checks
