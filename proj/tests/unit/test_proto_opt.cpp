#include <doctest.h>

#include <cmath>

#include "protoocc/errors.hpp"
#include "protoocc/grad_check.hpp"
#include "protoocc/log.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/proto_opt.hpp"
#include "protoocc/rng.hpp"

using namespace protoocc;
using namespace protoocc::proto;
using clustering::PseudoMaskSet;

namespace {

Tensor randn(Shape s, Rng& rng, bool grad = false) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(s), std::move(v), grad);
}

scene::HitSet one_view(std::vector<scene::HitSlot> slots) {
  scene::HitSet h;
  h.capacity = slots.size();
  h.views.push_back(std::move(slots));
  return h;
}

PseudoMaskSet mask_set(std::size_t h, std::size_t w, std::size_t s, std::vector<std::vector<std::int32_t>> ids) {
  PseudoMaskSet m;
  m.height = h;
  m.width = w;
  m.num_masks = s;
  m.ids = std::move(ids);
  return m;
}

// X with one pixel per view: [1, d, 1, pixels] laid out from column vectors.
Tensor columns_to_x(const std::vector<std::vector<double>>& cols) {
  const std::size_t d = cols[0].size(), p = cols.size();
  std::vector<double> v(d * p);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t c = 0; c < d; ++c) v[c * p + j] = cols[j][c];
  return Tensor({1, d, 1, p}, v);
}

}  // namespace

TEST_CASE("map_affinity_to_grid traces the floor-and-scatter rule") {
  auto hits = one_view({{0, 0.1, 0.1, 1, true}, {1, 0.6, 0.1, 1, true}});
  auto ha = map_affinity_to_grid(Tensor({1, 1, 2}, {0.3, 0.7}), hits, 2, 2);
  REQUIRE(ha.shape() == Shape{1, 1, 4});
  CHECK(ha[0] == 0.3);
  CHECK(ha[1] == 0.7);
  CHECK(ha[2] == 0.0);
  CHECK(ha[3] == 0.0);

  hits = one_view({{0, 1.5, 0.2, 1, true}, {1, -0.2, 0.5, 1, true}, {2, 0.3, 0.3, 1, false}});
  ha = map_affinity_to_grid(Tensor({1, 1, 3}, {0.4, 0.5, 0.6}), hits, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ha[i] == 0.0);

  hits = one_view({{0, 0.7, 0.8, 1, true}, {1, 0.9, 0.6, 1, true}});
  ha = map_affinity_to_grid(Tensor({1, 2, 2}, {0.25, 0.5, 1, 2}), hits, 2, 2);
  CHECK(ha[3] == 0.75);
  CHECK(ha[7] == 3.0);
}

TEST_CASE("map_affinity_to_grid conserves in-bounds mass") {
  Rng rng(2);
  scene::HitSet hits;
  hits.capacity = 30;
  for (int v = 0; v < 2; ++v) {
    std::vector<scene::HitSlot> s;
    for (int k = 0; k < 30; ++k) s.push_back({0, rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), 1, rng.uniform() < 0.8});
    hits.views.push_back(s);
  }
  const Tensor a = randn({2, 3, 30}, rng);
  const auto ha = map_affinity_to_grid(a, hits, 4, 5);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t m = 0; m < 3; ++m) {
      double expect = 0, got = 0;
      for (std::size_t k = 0; k < 30; ++k) {
        const auto& s = hits.views[v][k];
        if (s.valid && s.qx >= 0 && s.qx < 1 && s.qy >= 0 && s.qy < 1) expect += a[(v * 3 + m) * 30 + k];
      }
      for (std::size_t p = 0; p < 20; ++p) got += ha[(v * 3 + m) * 20 + p];
      CHECK(std::abs(got - expect) <= 1e-9);
    }
}

TEST_CASE("prototype_pixel_features examples") {
  auto x = prototype_pixel_features(Tensor({1, 2}, {0.5, 1.0}), Tensor({1, 1, 2}, {0.2, 0.4}),
                                    Tensor({1, 1, 1}, {3}), 1, 2);
  REQUIRE(x.shape() == Shape{1, 1, 1, 2});
  CHECK(x[0] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(1.2).epsilon(1e-14));

  Rng rng(3);
  const Tensor g = randn({2, 6}, rng), ha = randn({2, 2, 6}, rng), pv = randn({2, 2, 3}, rng);
  const auto zero = prototype_pixel_features(Tensor::zeros({2, 6}), ha, pv, 2, 3);
  for (double v : zero.data()) CHECK(v == 0.0);

  // Linearity in the prototype index.
  const auto full = prototype_pixel_features(g, ha, pv, 2, 3);
  auto part = [&](std::size_t m) {
    std::vector<double> h1(2 * 6), p1(2 * 3);
    for (std::size_t v = 0; v < 2; ++v) {
      std::copy_n(ha.data().begin() + (v * 2 + m) * 6, 6, h1.begin() + v * 6);
      std::copy_n(pv.data().begin() + (v * 2 + m) * 3, 3, p1.begin() + v * 3);
    }
    return prototype_pixel_features(g, Tensor({2, 1, 6}, h1), Tensor({2, 1, 3}, p1), 2, 3);
  };
  const auto a = part(0), b = part(1);
  for (std::size_t i = 0; i < full.numel(); ++i) CHECK(std::abs(full[i] - a[i] - b[i]) <= 1e-12);

  const auto report = grad_check(
      [](std::span<const Tensor> in) {
        Rng r(9);
        return ops::sum(ops::mul(prototype_pixel_features(in[0], in[1], in[2], 2, 3), randn({2, 3, 2, 3}, r)));
      },
      std::vector<Tensor>{g, ha, pv});
  CHECK(report.max_rel_err <= 1e-4);
  CHECK_THROWS_AS(prototype_pixel_features(g, ha, pv, 3, 3), DimensionError);
}

TEST_CASE("mask_centroids examples") {
  Rng rng(4);
  const Tensor x = randn({1, 2, 2, 3}, rng);
  auto c = mask_centroids(x, mask_set(2, 3, 1, {std::vector<std::int32_t>(6, 0)}));
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double mean = 0;
    for (std::size_t p = 0; p < 6; ++p) mean += x[ch * 6 + p] / 6;
    CHECK(c.centroids[ch] == doctest::Approx(mean).epsilon(1e-14));
  }

  c = mask_centroids(Tensor({1, 1, 1, 3}, {1, 5, 3}), mask_set(1, 3, 2, {{0, 1, 0}}));
  CHECK(c.centroids[0] == 2.0);
  CHECK(c.centroids[1] == 5.0);

  c = mask_centroids(x, mask_set(2, 3, 6, {{0, 1, 2, 3, 4, 5}}));
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t ch = 0; ch < 2; ++ch) CHECK(c.centroids[p * 2 + ch] == x[ch * 6 + p]);

  c = mask_centroids(Tensor({1, 1, 1, 3}, {1, 5, 3}), mask_set(1, 3, 3, {{0, 2, 0}}));
  CHECK_FALSE(c.valid(0, 1));
  CHECK(c.centroids[1] == 0.0);
  CHECK_THROWS_AS(mask_centroids(x, mask_set(2, 2, 1, {std::vector<std::int32_t>(4, 0)})), DimensionError);
  CHECK_THROWS_AS(mask_centroids(x, mask_set(2, 3, 1, {{0, 0, 0, 0, 0, 1}})), DataError);
}

TEST_CASE("contrastive_loss closed forms") {
  Rng rng(5);
  const Tensor x = randn({2, 3, 2, 2}, rng);
  const auto one = mask_set(2, 2, 1, {std::vector<std::int32_t>(4, 0), std::vector<std::int32_t>(4, 0)});
  CHECK(std::abs(contrastive_loss(x, mask_centroids(x, one), one, 0.3).item()) <= 1e-12);

  // Pixel 0 lies along its centroid e1 and is orthogonal to the other centroid e2.
  const Tensor xa = columns_to_x({{1, 0}, {0, 1}});
  const auto m2 = mask_set(1, 2, 2, {{0, 1}});
  const auto loss = contrastive_loss(xa, mask_centroids(xa, m2), m2, 0.3).item();
  CHECK(loss / 2 == doctest::Approx(std::log(1 + std::exp(-1 / 0.3))).epsilon(1e-12));
  CHECK(loss / 2 == doctest::Approx(0.0351).epsilon(1e-2));

  // Pixel orthogonal to both centroids.
  const Tensor xb = columns_to_x({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto m3 = mask_set(1, 3, 2, {{0, 1, 0}});
  MaskCentroids c{Tensor({1, 2, 3}, {1, 0, 0, 0, 1, 0}), {2, 1}};
  const Tensor x3 = columns_to_x({{0, 0, 1}, {0, 0, 1}, {0, 0, 1}});
  const double per_pixel = contrastive_loss(x3, c, m3, 0.7).item() / 3;
  CHECK(per_pixel == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(contrastive_loss(xb, mask_centroids(xb, m3), m3, 0.3).item() >= 0.0);
  CHECK_THROWS_AS(contrastive_loss(xa, mask_centroids(xa, m2), m2, 0.0), ParameterError);
}

TEST_CASE("contrastive_loss excludes empty masks and warns when nothing is valid") {
  const Tensor x = columns_to_x({{1, 0}, {0, 1}});
  const auto m = mask_set(1, 2, 3, {{0, 2}});
  const auto with_empty = contrastive_loss(x, mask_centroids(x, m), m, 0.3).item();
  const auto m2 = mask_set(1, 2, 2, {{0, 1}});
  const auto without = contrastive_loss(x, mask_centroids(x, m2), m2, 0.3).item();
  CHECK(with_empty == doctest::Approx(without).epsilon(1e-12));

  std::vector<std::string> seen;
  auto previous = set_warning_sink([&](const std::string& s) { seen.push_back(s); });
  MaskCentroids none{Tensor::zeros({1, 2, 2}), {0, 0}};
  CHECK(contrastive_loss(x, none, m2, 0.3).item() == 0.0);
  set_warning_sink(previous);
  CHECK(seen.size() == 1);
}

TEST_CASE("contrastive_loss is non-negative, monotone in tau, and differentiable") {
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    const Tensor x = randn({2, 4, 3, 3}, rng);
    PseudoMaskSet m = mask_set(3, 3, 3, {});
    for (int v = 0; v < 2; ++v) {
      std::vector<std::int32_t> ids(9);
      for (auto& id : ids) id = static_cast<std::int32_t>(rng.uniform_int(3));
      m.ids.push_back(ids);
    }
    CHECK(contrastive_loss(x, mask_centroids(x, m), m, 0.3).item() >= 0.0);
  }

  // The pixel is strictly closest to its own centroid.
  const MaskCentroids c{Tensor({1, 2, 2}, {1, 0, 0, 1}), {1, 1}};
  const Tensor x = columns_to_x({{1, 0.4}, {0, 1}});
  const auto m = mask_set(1, 2, 2, {{0, 1}});
  double previous = 1e300;
  for (double tau : {1.0, 0.5, 0.3, 0.1}) {
    const double l = contrastive_loss(x, c, m, tau).item();
    CHECK(l < previous);
    previous = l;
  }

  const Tensor xg = randn({2, 3, 2, 3}, rng);
  PseudoMaskSet mg = mask_set(2, 3, 3, {{0, 0, 1, 1, 2, 2}, {2, 1, 1, 0, 0, 0}});
  const auto report = grad_check(
      [&](const Tensor& in) { return contrastive_loss(in, mask_centroids(in, mg), mg, 0.3); }, xg);
  CHECK(report.max_rel_err <= 1e-4);
}
