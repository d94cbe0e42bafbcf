#include <doctest.h>

#include <cmath>

#include "protoocc/errors.hpp"
#include "protoocc/grad_check.hpp"
#include "protoocc/losses.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/rng.hpp"

using namespace protoocc;
using namespace protoocc::losses;

namespace {

Tensor random_probs(std::size_t n, std::size_t l, Rng& rng) {
  std::vector<double> v(n * l);
  for (auto& x : v) x = 2 * rng.normal();
  return ops::softmax(Tensor({n, l}, v));
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t l, Rng& rng) {
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = static_cast<std::uint8_t>(rng.uniform_int(l));
  return y;
}

// Jaccard loss of the error set {i : err_i >= t} for class c.
double jaccard_loss_at(const std::vector<double>& err, const std::vector<bool>& fg, double t) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const bool wrong = err[i] >= t;
    if (fg[i] && !wrong) ++inter;
    if (fg[i] || wrong) ++uni;
  }
  return uni > 0 ? 1.0 - inter / uni : 0.0;
}

// Lovász extension as the integral over thresholds of the set function.
double lovasz_by_integration(const Tensor& probs, const std::vector<std::uint8_t>& y) {
  const std::size_t n = probs.size(0), l = probs.size(1);
  double total = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < l; ++c) {
    std::vector<double> err(n);
    std::vector<bool> fg(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      fg[i] = y[i] == c;
      any = any || fg[i];
      err[i] = fg[i] ? 1 - probs[i * l + c] : probs[i * l + c];
    }
    if (!any) continue;
    ++present;
    // Piecewise constant in t: integrate exactly between sorted error values.
    std::vector<double> cuts(err);
    cuts.push_back(0.0);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 1; k < cuts.size(); ++k)
      if (cuts[k] > cuts[k - 1]) total += (cuts[k] - cuts[k - 1]) * jaccard_loss_at(err, fg, cuts[k]);
  }
  return present ? total / static_cast<double>(present) : 0.0;
}

}  // namespace

TEST_CASE("occupancy_ce_loss closed forms") {
  const Tensor perfect({2, 3}, {1, 0, 0, 0, 0, 1});
  const std::vector<std::uint8_t> y{0, 2};
  CHECK(occupancy_ce_loss(perfect, y).item() == 0.0);
  CHECK(occupancy_ce_loss(Tensor::full({3, 4}, 0.25), std::vector<std::uint8_t>{0, 1, 3}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(occupancy_ce_loss(Tensor({1, 2}, {0.5, 0.5}), std::vector<std::uint8_t>{1}).item() ==
        doctest::Approx(0.6931).epsilon(1e-4));
  const std::vector<double> w{1, 0, 3};
  const Tensor p({2, 3}, {0.5, 0.25, 0.25, 0.1, 0.1, 0.8});
  CHECK(occupancy_ce_loss(p, y, w).item() ==
        doctest::Approx((-std::log(0.5) - 3 * std::log(0.8)) / 4).epsilon(1e-14));
  CHECK_THROWS_AS(occupancy_ce_loss(p, std::vector<std::uint8_t>{0, 3}), DataError);
  CHECK_THROWS_AS(occupancy_ce_loss(p, std::vector<std::uint8_t>{0}), DimensionError);
}

TEST_CASE("lovasz_softmax_loss examples") {
  CHECK(lovasz_softmax_loss(Tensor({2, 3}, {1, 0, 0, 0, 0, 1}), std::vector<std::uint8_t>{0, 2}).item() == 0.0);
  // Single cell, true class probability 0: that class contributes exactly 1.
  const auto single = lovasz_softmax_loss(Tensor({1, 2}, {1, 0}), std::vector<std::uint8_t>{1}).item();
  CHECK(single == 1.0);
}

TEST_CASE("lovasz on one-hot predictions equals one minus IoU") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto y = random_labels(30, 4, rng);
    const auto pred = random_labels(30, 4, rng);
    std::vector<double> onehot(30 * 4, 0.0);
    for (std::size_t i = 0; i < 30; ++i) onehot[i * 4 + pred[i]] = 1.0;
    const auto r = miou(pred, y, 4, false);
    double expect = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < 4; ++c)
      if (std::count(y.begin(), y.end(), c)) {
        expect += 1.0 - r.per_class[c].value();
        ++present;
      }
    CHECK(lovasz_softmax_loss(Tensor({30, 4}, onehot), y).item() == doctest::Approx(expect / present).epsilon(1e-12));
  }
}

TEST_CASE("lovasz matches the threshold-integral definition") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_probs(12, 3, rng);
    const auto y = random_labels(12, 3, rng);
    const double got = lovasz_softmax_loss(p, y).item();
    CHECK(std::abs(got - lovasz_by_integration(p, y)) <= 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("raising the true-class probability never increases the Lovasz loss") {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 8;
    std::vector<double> p(n * 2);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i * 2] = rng.uniform();
      p[i * 2 + 1] = 1 - p[i * 2];
      y[i] = static_cast<std::uint8_t>(rng.uniform_int(2));
    }
    const double before = lovasz_softmax_loss(Tensor({n, 2}, p), y).item();
    const std::size_t i = rng.uniform_int(n);
    const double bump = rng.uniform(0, 1 - p[i * 2 + y[i]]);
    p[i * 2 + y[i]] += bump;
    p[i * 2 + 1 - y[i]] -= bump;
    CHECK(lovasz_softmax_loss(Tensor({n, 2}, p), y).item() <= before + 1e-15);
  }
}

TEST_CASE("loss gradients") {
  Rng rng(4);
  const auto y = random_labels(10, 4, rng);
  std::vector<double> logits(40);
  for (auto& x : logits) x = rng.normal();
  auto report = grad_check([&](const Tensor& z) { return occupancy_ce_loss(ops::softmax(z), y); }, Tensor({10, 4}, logits));
  CHECK(report.max_rel_err <= 1e-4);
  // Distinct errors keep the sort order fixed under the finite-difference step.
  report = grad_check([&](const Tensor& z) { return lovasz_softmax_loss(ops::softmax(z), y); }, Tensor({10, 4}, logits));
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("total_loss arithmetic") {
  const LossWeights w;
  std::vector<BranchLoss> one{{Tensor::scalar(0.5), Tensor::scalar(0.2)}};
  CHECK(total_loss(one, Tensor::scalar(0.3), Tensor::scalar(0.1), w).item() == doctest::Approx(5.6).epsilon(1e-14));
  CHECK(total_loss(one, Tensor(), Tensor(), {10, 1, 0, 0}).item() == doctest::Approx(5.2).epsilon(1e-14));
  std::vector<BranchLoss> zeros{{Tensor::scalar(0), Tensor::scalar(0)}, {Tensor::scalar(0), Tensor::scalar(0)}};
  CHECK(total_loss(zeros, Tensor::scalar(0), Tensor::scalar(0), w).item() == 0.0);
  std::vector<BranchLoss> two{{Tensor::scalar(0.5), Tensor::scalar(0.2)}, {Tensor::scalar(0.25), Tensor::scalar(0.5)}};
  const LossWeights v{2, 3, 5, 7};
  CHECK(total_loss(two, Tensor::scalar(1), Tensor::scalar(2), v).item() ==
        doctest::Approx(2 * 0.75 + 3 * 0.7 + 5 + 14).epsilon(1e-14));
}

TEST_CASE("miou examples and properties") {
  const std::vector<std::uint8_t> gt{0, 1, 1, 2, 2, 0};
  CHECK(miou(gt, gt, 3, true).mean == 1.0);
  const std::vector<std::uint8_t> pred{0, 1, 0, 0, 2, 1};
  const auto r = miou(pred, gt, 3, true);
  CHECK(r.per_class[1].value() == doctest::Approx(1.0 / 3.0));
  CHECK(r.per_class[2].value() == doctest::Approx(0.5));
  CHECK_FALSE(r.per_class[0].has_value());
  CHECK(r.mean == doctest::Approx((1.0 / 3.0 + 0.5) / 2));
  const auto disjoint = miou(std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 1}, 3, true);
  CHECK(disjoint.per_class[1].value() == 0.0);
  CHECK_FALSE(disjoint.per_class[2].has_value());

  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    auto a = random_labels(40, 5, rng), b = random_labels(40, 5, rng);
    const auto m = miou(a, b, 5, true);
    CHECK(m.mean >= 0.0);
    CHECK(m.mean <= 1.0);
    for (std::size_t i = 39; i > 0; --i) {
      const auto j = rng.uniform_int(i + 1);
      std::swap(a[i], a[j]);
      std::swap(b[i], b[j]);
    }
    CHECK(miou(a, b, 5, true).mean == doctest::Approx(m.mean).epsilon(1e-15));
  }

  IouAccumulator acc(3, true);
  acc.add(std::vector<std::uint8_t>{1, 1}, std::vector<std::uint8_t>{1, 0});
  acc.add(std::vector<std::uint8_t>{0}, std::vector<std::uint8_t>{1});
  CHECK(acc.result().per_class[1].value() == doctest::Approx(1.0 / 3.0));
  CHECK(acc.result().occupancy_iou == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(acc.add(std::vector<std::uint8_t>{3}, std::vector<std::uint8_t>{0}), DataError);
}
