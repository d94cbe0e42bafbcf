// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>

#include "checks.hpp"
#include "instances.hpp"
#include "protoocc/decoder.hpp"
#include "protoocc/proto_opt.hpp"

namespace protoocc::checks {

namespace {

using decoder::ConvGeometry;
using decoder::SpatialTransform;

double max_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

SpatialTransform transpose_xy() { return {{{true, {0, 1}}}}; }
SpatialTransform flip_xy() { return {{{false, {0, 1}}}}; }

}  // namespace

CheckResult check_slab_expansions(std::size_t kernels, std::uint64_t seed) {
  NoGradGuard no_grad;
  Stopwatch clock;
  Rng rng(seed);
  const double a = 1, b = 2, c = 3, d = 4;
  const Tensor input({2, 2, 1, 1}, {a, b, c, d});
  const ConvGeometry unit{{2, 2, 1}, {1, 1, 1}, {0, 0, 0}};
  CheckResult r{"algebra.slab_expansions", 0, 0, 1e-12, 0};
  for (std::size_t i = 0; i < kernels; ++i) {
    const double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
    const Tensor kernel({2, 2, 1, 1, 1}, {w, x, y, z});
    auto conv = [&](const Tensor& in) { return decoder::conv_transpose3d(in, kernel, Tensor{}, unit); };
    auto redo = [&](const SpatialTransform& t) { return t.invert(conv(t.apply(input))); };

    const std::vector<double> original{a * w,         a * x + b * w,                 b * x,
                                       a * y + c * w, a * z + b * y + c * x + d * w, b * z + d * x,
                                       c * y,         c * z + d * y,                 d * z};
    const std::vector<double> transposed{a * w,         a * y + b * w,                 b * y,
                                         a * x + c * w, a * z + c * y + b * x + d * w, b * z + d * y,
                                         c * x,         c * z + d * x,                 d * z};
    const std::vector<double> flipped{a * z,         a * y + b * z,                 b * y,
                                      a * x + c * z, a * w + b * x + c * y + d * z, b * w + d * y,
                                      c * x,         c * w + d * x,                 d * w};
    r.max_error = std::max({r.max_error, max_diff(conv(input).data(), original),
                            max_diff(redo(transpose_xy()).data(), transposed),
                            max_diff(redo(flip_xy()).data(), flipped)});
    ++r.instances;
  }
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_kernel_transform_identity(std::size_t cases, std::uint64_t seed) {
  NoGradGuard no_grad;
  Stopwatch clock;
  Rng rng(seed);
  CheckResult r{"algebra.kernel_transform_identity", 0, 0, 1e-12, 0};
  while (r.instances < cases) {
    // Equal extents and geometry on every axis keep any swap well-typed.
    const auto n = pick(rng, 1, 3), k = pick(rng, 1, 3), s = pick(rng, 1, 2), p = pick(rng, 0, k - 1);
    if ((n - 1) * s + k <= 2 * p) continue;
    const ConvGeometry g{{k, k, k}, {s, s, s}, {p, p, p}};
    SpatialTransform t;
    for (std::size_t step = pick(rng, 1, 3); step > 0; --step) {
      if (rng.uniform() < 0.5) {
        std::size_t a0 = rng.uniform_int(3), a1 = (a0 + 1 + rng.uniform_int(2)) % 3;
        t.steps.push_back({true, {a0, a1}});
      } else {
        std::vector<std::size_t> axes;
        for (std::size_t a = 0; a < 3; ++a)
          if (rng.uniform() < 0.5) axes.push_back(a);
        if (axes.empty()) axes.push_back(rng.uniform_int(3));
        t.steps.push_back({false, axes});
      }
    }
    const auto cin = pick(rng, 1, 2), cout = pick(rng, 1, 2);
    const Tensor x = random_tensor({n, n, n, cin}, rng);
    const Tensor kernel = random_tensor({k, k, k, cin, cout}, rng);
    const Tensor bias = random_tensor({cout}, rng);
    const Tensor lhs = t.invert(decoder::conv_transpose3d(t.apply(x), kernel, bias, g));
    const Tensor rhs = decoder::conv_transpose3d(x, t.apply_to_kernel(kernel), bias, g);
    r.max_error = std::max(r.max_error, max_diff(lhs.data(), rhs.data()));
    ++r.instances;
  }
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_branch_distinctness(std::size_t kernels, std::uint64_t seed) {
  NoGradGuard no_grad;
  Stopwatch clock;
  Rng rng(seed);
  // Passes when the smallest per-kernel difference exceeds 1e-6; the reported
  // error is 1e-6 / (that minimum), so <= 1 means pass.
  CheckResult r{"algebra.branch_distinctness", 0, 0, 1.0, 0};
  double smallest = std::numeric_limits<double>::infinity();
  const ConvGeometry up{{2, 2, 2}, {2, 2, 2}, {0, 0, 0}};
  for (std::size_t i = 0; i < kernels; ++i) {
    const Tensor x = random_tensor({3, 3, 2, 2}, rng);
    const Tensor kernel = random_tensor({2, 2, 2, 2, 2}, rng);
    const SpatialTransform t = i % 2 ? flip_xy() : transpose_xy();
    const Tensor base = decoder::conv_transpose3d(x, kernel, Tensor{}, up);
    const Tensor branch = t.invert(decoder::conv_transpose3d(t.apply(x), kernel, Tensor{}, up));
    smallest = std::min(smallest, max_diff(base.data(), branch.data()));
    ++r.instances;
  }
  r.max_error = smallest > 0 ? 1e-6 / smallest : std::numeric_limits<double>::infinity();
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_sharpen(std::size_t distributions, std::uint64_t seed) {
  Stopwatch clock;
  Rng rng(seed);
  CheckResult r{"normalization.sharpen", 0, 0, 1e-12, 0};
  for (std::size_t i = 0; i < distributions; ++i) {
    const auto l = pick(rng, 2, 8);
    const double tau = rng.uniform(0.05, 2.0);
    const Tensor p = ops::softmax(random_tensor({1, l}, rng, false, 2.0));
    const Tensor s = decoder::sharpen(p, tau);
    double sum = 0;
    for (double v : s.data()) sum += v;
    const auto argmax = [](std::span<const double> v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
    const double err = argmax(p.data()) == argmax(s.data()) ? std::abs(sum - 1) : std::numeric_limits<double>::infinity();
    r.max_error = std::max(r.max_error, err);
    ++r.instances;
  }
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_consensus_zero(std::size_t cases, std::uint64_t seed) {
  Stopwatch clock;
  Rng rng(seed);
  CheckResult r{"normalization.consistency_consensus", 0, 0, 1e-20, 0};
  for (std::size_t i = 0; i < cases; ++i) {
    const auto branches = pick(rng, 1, 4), cells = pick(rng, 1, 16), l = pick(rng, 2, 6);
    const Tensor p = ops::softmax(random_tensor({cells, l}, rng));
    const std::vector<Tensor> same(branches, p);
    r.max_error = std::max(r.max_error, std::abs(decoder::consistency_loss(same, 1.0).item()));
    ++r.instances;
  }
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_single_mask_contrastive(std::size_t cases, std::uint64_t seed) {
  Stopwatch clock;
  Rng rng(seed);
  CheckResult r{"normalization.single_mask_contrastive", 0, 0, 1e-12, 0};
  for (std::size_t i = 0; i < cases; ++i) {
    const auto n = pick(rng, 1, 2), d = pick(rng, 1, 4), h = pick(rng, 1, 6), w = pick(rng, 1, 6);
    const auto masks = random_masks(n, h, w, 1, rng);
    const Tensor x = random_tensor({n, d, h, w}, rng);
    const double loss = proto::contrastive_loss(x, proto::mask_centroids(x, masks), masks, rng.uniform(0.05, 1)).item();
    r.max_error = std::max(r.max_error, std::abs(loss));
    ++r.instances;
  }
  r.seconds = clock.seconds();
  return r;
}

}  // namespace protoocc::checks
