#include <doctest.h>

#include <cmath>
#include <numeric>

#include "protoocc/errors.hpp"
#include "protoocc/grad_check.hpp"
#include "protoocc/mlp.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/rng.hpp"

using namespace protoocc;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

MlpParams single_layer(double w, double b, Activation act) {
  MlpParams p;
  p.layers.push_back({Tensor({1, 1}, {w}), Tensor({1}, {b}), act});
  return p;
}

}  // namespace

TEST_CASE("mlp_forward examples") {
  MlpParams id;
  id.layers.push_back({Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}), Activation::identity});
  auto y = mlp_forward(id, Tensor({2}, {2, 3}));
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 3.0);

  CHECK(mlp_forward(single_layer(2, 1, Activation::relu), Tensor({1}, {-3})).item() == 0.0);
  CHECK(mlp_forward(single_layer(2, 1, Activation::relu), Tensor({1}, {3})).item() == 7.0);
}

TEST_CASE("mlp_forward reports both shapes on mismatch") {
  MlpParams p = single_layer(1, 0, Activation::identity);
  try {
    mlp_forward(p, Tensor::zeros({3, 2}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3, 2]") != std::string::npos);
    CHECK(msg.find("[1, 1]") != std::string::npos);
  }
  MlpParams bad;
  bad.layers.push_back({Tensor::zeros({3, 2}), Tensor::zeros({3}), Activation::relu});
  bad.layers.push_back({Tensor::zeros({1, 4}), Tensor::zeros({1}), Activation::identity});
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("softmax_with_temperature examples") {
  auto s = ops::softmax(Tensor({2}, {0, 0}), 1.0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  s = ops::softmax(Tensor({2}, {std::log(3.0), 0}), 1.0);
  CHECK(std::abs(s[0] - 0.75) < 1e-12);
  CHECK(std::abs(s[1] - 0.25) < 1e-12);
  s = ops::softmax(Tensor({2}, {1, 0}), 0.01);
  CHECK(std::abs(s[0] - 1.0) < 1e-6);
  CHECK(std::abs(s[1]) < 1e-6);
  CHECK_THROWS_AS(ops::softmax(Tensor({2}, {1, 0}), 0.0), ParameterError);
  CHECK_THROWS_AS(ops::softmax(Tensor({2}, {1, 0}), -1.0), ParameterError);
}

TEST_CASE("softmax output is a probability vector and order preserving") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto l = 1 + rng.uniform_int(8);
    auto x = random_tensor({3, l}, rng, -20, 20);
    const double tau = rng.uniform(0.05, 3.0);
    auto s = ops::softmax(x, tau);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < l; ++j) {
        CHECK(s[r * l + j] >= 0.0);
        total += s[r * l + j];
        for (std::size_t k = 0; k < l; ++k)
          if (x[r * l + j] < x[r * l + k]) CHECK(s[r * l + j] <= s[r * l + k]);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cosine_similarity examples and zero-norm convention") {
  CHECK(ops::cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {1, 0})).item() == 1.0);
  CHECK(ops::cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})).item() == 0.0);
  CHECK(std::abs(ops::cosine_similarity(Tensor({2}, {1, 1}), Tensor({2}, {1, 0})).item() -
                 0.70710678118654752) < 1e-6);
  CHECK(ops::cosine_similarity(Tensor({2}, {0, 0}), Tensor({2}, {1, 0})).item() == 0.0);
  CHECK_THROWS_AS(ops::cosine_similarity(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("cosine_similarity is symmetric and scale invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_tensor({4, 3}, rng);
    auto b = random_tensor({4, 3}, rng);
    auto ab = ops::cosine_similarity(a, b);
    auto ba = ops::cosine_similarity(b, a);
    auto a2b = ops::cosine_similarity(ops::scale(a, 2.0), b);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(ab[i] - ba[i]) <= 1e-12);
      CHECK(std::abs(ab[i] - a2b[i]) <= 1e-12);
      CHECK(ab[i] <= 1.0 + 1e-15);
      CHECK(ab[i] >= -1.0 - 1e-15);
    }
  }
}

TEST_CASE("grad_check examples") {
  auto report = grad_check([](const Tensor& x) { return ops::sum(ops::square(x)); },
                           Tensor({2}, {1, 2}));
  CHECK(report.per_element[0].analytic == doctest::Approx(2.0));
  CHECK(report.per_element[1].analytic == doctest::Approx(4.0));
  CHECK(report.max_rel_err <= 1e-6);

  auto constant = grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, Tensor({3}, {1, 2, 3}));
  CHECK(constant.max_rel_err == 0.0);
  for (const auto& e : constant.per_element) CHECK(e.analytic == 0.0);

  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return ops::sum(x); }, Tensor({1}, {1}), 1e-2),
                  ParameterError);
  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return ops::sum(ops::log(x, 0.0)); },
                             Tensor({1}, {0.0})),
                  EvaluationError);
}

TEST_CASE("primitive ops pass grad_check on random inputs") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4}, rng);
    auto w = random_tensor({2, 4}, rng);
    auto s = random_tensor({3}, rng, 0.5, 1.5);
    const Tensor in[] = {a, b, w, s};
    auto report = grad_check(
        [](std::span<const Tensor> t) {
          auto h = ops::add(t[0], t[1]);
          h = ops::mul(h, t[1]);
          h = ops::scale_rows(h, ops::reciprocal(t[3]));
          auto lin = ops::linear(h, t[2], Tensor());
          auto sm = ops::softmax(lin, 0.7);
          auto ls = ops::log_softmax(lin, 1.3);
          auto cs = ops::pairwise_cosine(h, t[2]);
          auto sg = ops::sigmoid(ops::sum_last(h));
          auto total = ops::add(ops::sum(ops::mul(sm, ls)), ops::sum(ops::square(cs)));
          total = ops::add(total, ops::mean(ops::exp(ops::scale(sg, 0.5))));
          total = ops::add(total, ops::sum(ops::log(ops::add_scalar(ops::square(h), 1.0))));
          return total;
        },
        in);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("layout ops pass grad_check and behave as index maps") {
  Rng rng(7);
  auto x = random_tensor({2, 3, 4}, rng);
  const std::size_t axes[] = {2, 0, 1};
  auto p = ops::permute(x, axes);
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p[1 * 6 + 1 * 3 + 2] == x[1 * 12 + 2 * 4 + 1]);
  const std::size_t fa[] = {0, 2};
  auto f = ops::flip(x, fa);
  CHECK(f[0] == x[1 * 12 + 0 * 4 + 3]);
  auto ff = ops::flip(f, fa);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(ff[i] == x[i]);

  const std::size_t rows[] = {2, 0, 2};
  const std::size_t cols[] = {1, 3, 0};
  for (int trial = 0; trial < 20; ++trial) {
    auto t = random_tensor({3, 4}, rng);
    auto report = grad_check(
        [&](const Tensor& v) {
          auto g = ops::gather_rows(v, rows);
          auto sc = ops::scatter_add_rows(g, rows, 5);
          auto pk = ops::pick(ops::reshape(sc, {5, 4}), std::vector<std::size_t>{0, 1, 2, 3, 0});
          const Tensor parts[] = {ops::select(ops::stack(std::vector<Tensor>{v, v}), 1), v};
          auto st = ops::stack(parts);
          const std::size_t tx[] = {1, 0};
          auto tr = ops::flip(ops::permute(ops::select(st, 0), tx), std::vector<std::size_t>{1});
          auto pk2 = ops::pick(v, std::span<const std::size_t>(cols, 3));
          return ops::add(ops::add(ops::sum(ops::square(pk)), ops::sum(ops::mul(tr, tr))),
                          ops::sum(ops::exp(pk2)));
        },
        t);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("normalize gradient is zero at the zero vector") {
  Tensor x({2, 2}, {0, 0, 1, 2}, true);
  auto y = ops::sum(ops::normalize(x));
  y.backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward accumulates into leaves and NoGradGuard skips recording") {
  Tensor x({1}, {3.0}, true);
  ops::sum(ops::square(x)).backward();
  ops::sum(ops::square(x)).backward();
  CHECK(x.grad()[0] == 12.0);
  {
    NoGradGuard guard;
    auto y = ops::square(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(ops::square(x).requires_grad());
}

TEST_CASE("tensor construction validates length") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("rng is deterministic, splittable and checkpointable") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  auto s1 = c.split("dropout");
  auto s2 = c.split("noise");
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(c.state() == Rng(42).state());

  Rng r(9);
  r.next_u64();
  auto saved = r.state();
  const auto next = r.next_u64();
  auto restored = Rng::from_state(saved);
  CHECK(restored.next_u64() == next);

  Rng u(1);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  for (int i = 0; i < 1000; ++i) CHECK(u.uniform_int(7) < 7);
}
