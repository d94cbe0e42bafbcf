// SPDX-License-Identifier: Apache-2.0
#include "protoocc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "protoocc/errors.hpp"

namespace protoocc::ops {

using detail::Node;

namespace {

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
std::vector<double>& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const std::vector<double>& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

// b must equal a trailing suffix of a; returns the suffix size.
std::size_t suffix_size(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  if (!ok) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(sb) +
                         " is not a suffix of " + shape_str(sa));
  }
  return b.numel();
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": expected rank >= 1");
  return x.shape().back();
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    auto& gx = pgrad(self, 0);
    const auto& xv = pval(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto n = suffix_size(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_result(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto n = suffix_size(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % n];
  return make_result(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const auto& av = pval(self, 0);
    const auto& bv = pval(self, 1);
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i % n];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const auto d = last_dim(x, "scale_rows");
  if (s.shape() != drop_last(x.shape())) {
    throw DimensionError("scale_rows: factor shape " + shape_str(s.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  auto xv = x.data();
  auto sv = s.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv[i / d];
  return make_result(x.shape(), std::move(out), {x, s}, [d](Node& self) {
    const auto& xv = pval(self, 0);
    const auto& sv = pval(self, 1);
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv[i / d];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / d] += self.grad[i] * xv[i];
    }
  });
}

Tensor mask(const Tensor& x, std::span<const double> m) {
  if (m.size() != x.numel()) {
    throw DimensionError("mask: length " + std::to_string(m.size()) + " vs tensor " +
                         shape_str(x.shape()));
  }
  std::vector<double> mv(m.begin(), m.end());
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mv[i];
  return make_result(x.shape(), std::move(out), {x}, [mv = std::move(mv)](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mv[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result(Shape{}, {s}, {x}, [](Node& self) {
    auto& g = pgrad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
  const auto d = last_dim(x, "sum_last");
  const auto rows = d ? x.numel() / d : 0;
  std::vector<double> out(rows, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r] += xv[r * d + j];
  return make_result(drop_last(x.shape()), std::move(out), {x}, [d](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / d];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n, 0.0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return make_result(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& av = pval(self, 0);
    const auto& bv = pval(self, 1);
    const auto& g = self.grad;
    if (wants(self, 0)) {
      auto& ga = pgrad(self, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (wants(self, 1)) {
      auto& gb = pgrad(self, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t axes[2] = {1, 0};
  return permute(a, axes);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto din = last_dim(x, "linear");
  if (weight.rank() != 2 || weight.size(1) != din) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const auto dout = weight.size(0);
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for output size " +
                         std::to_string(dout));
  }
  const auto rows = x.numel() / din;
  Shape out_shape = drop_last(x.shape());
  out_shape.push_back(dout);
  std::vector<double> out(rows * dout, 0.0);
  auto xv = x.data();
  auto wv = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * din];
    double* orow = &out[r * dout];
    for (std::size_t o = 0; o < dout; ++o) {
      const double* wr = &wv[o * din];
      double acc = 0.0;
      for (std::size_t i = 0; i < din; ++i) acc += wr[i] * xr[i];
      orow[o] = acc;
    }
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::size_t o = 0; o < dout; ++o) orow[o] += bv[o];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, din, dout, has_bias](Node& self) {
                       const auto& xv = pval(self, 0);
                       const auto& wv = pval(self, 1);
                       const auto& g = self.grad;
                       if (wants(self, 0)) {
                         auto& gx = pgrad(self, 0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < dout; ++o) {
                             const double go = g[r * dout + o];
                             if (go == 0.0) continue;
                             const double* wr = &wv[o * din];
                             double* gxr = &gx[r * din];
                             for (std::size_t i = 0; i < din; ++i) gxr[i] += go * wr[i];
                           }
                       }
                       if (wants(self, 1)) {
                         auto& gw = pgrad(self, 1);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < dout; ++o) {
                             const double go = g[r * dout + o];
                             if (go == 0.0) continue;
                             const double* xr = &xv[r * din];
                             double* gwr = &gw[o * din];
                             for (std::size_t i = 0; i < din; ++i) gwr[i] += go * xr[i];
                           }
                       }
                       if (has_bias && wants(self, 2)) {
                         auto& gb = pgrad(self, 2);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < dout; ++o) gb[o] += g[r * dout + o];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// Maps each output flat index to its source flat index.
std::vector<std::size_t> gather_map(const Shape& in_shape, const Shape& out_shape,
                                    const std::vector<std::size_t>& src_axis_of_out,
                                    const std::vector<bool>& reversed_out) {
  const auto in_strides = strides_of(in_shape);
  const auto n = shape_numel(out_shape);
  const auto rank = out_shape.size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t ax = 0; ax < rank; ++ax) {
      const auto i = reversed_out[ax] ? out_shape[ax] - 1 - idx[ax] : idx[ax];
      src += i * in_strides[src_axis_of_out[ax]];
    }
    map[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) break;
      idx[ax] = 0;
    }
  }
  return map;
}

Tensor remap(const Tensor& x, Shape out_shape, std::vector<std::size_t> map) {
  std::vector<double> out(map.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xv[map[i]];
  return make_result(std::move(out_shape), std::move(out), {x},
                     [map = std::move(map)](Node& self) {
                       auto& g = pgrad(self, 0);
                       for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
                     });
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const auto rank = x.rank();
  std::vector<bool> used(rank, false);
  if (axes.size() != rank) throw DimensionError("permute: axis count mismatch");
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || used[axes[i]]) throw DimensionError("permute: invalid axes");
    used[axes[i]] = true;
    out_shape[i] = x.shape()[axes[i]];
  }
  std::vector<std::size_t> src(axes.begin(), axes.end());
  auto map = gather_map(x.shape(), out_shape, src, std::vector<bool>(rank, false));
  return remap(x, std::move(out_shape), std::move(map));
}

Tensor flip(const Tensor& x, std::span<const std::size_t> axes) {
  const auto rank = x.rank();
  std::vector<bool> rev(rank, false);
  for (auto a : axes) {
    if (a >= rank) throw DimensionError("flip: axis out of range");
    rev[a] = !rev[a];
  }
  std::vector<std::size_t> src(rank);
  std::iota(src.begin(), src.end(), 0);
  auto map = gather_map(x.shape(), x.shape(), src, rev);
  return remap(x, x.shape(), std::move(map));
}

Tensor softmax(const Tensor& x, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax: temperature must be positive");
  const auto d = last_dim(x, "softmax");
  const auto rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double* orow = &out[r * d];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, xr[j] / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (orow[j] = std::exp(xr[j] / tau - mx));
    for (std::size_t j = 0; j < d; ++j) orow[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [d, rows, tau](Node& self) {
    auto& gx = pgrad(self, 0);
    const auto& y = self.value;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        gx[r * d + j] += y[r * d + j] * (self.grad[r * d + j] - dot) / tau;
    }
  });
}

Tensor log_softmax(const Tensor& x, double tau) {
  if (!(tau > 0.0)) throw ParameterError("log_softmax: temperature must be positive");
  const auto d = last_dim(x, "log_softmax");
  const auto rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double* orow = &out[r * d];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, xr[j] / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(xr[j] / tau - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) orow[j] = xr[j] / tau - lz;
  }
  return make_result(x.shape(), std::move(out), {x}, [d, rows, tau](Node& self) {
    auto& gx = pgrad(self, 0);
    const auto& y = self.value;
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < d; ++j) gs += self.grad[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        gx[r * d + j] += (self.grad[r * d + j] - std::exp(y[r * d + j]) * gs) / tau;
    }
  });
}

Tensor normalize(const Tensor& x) {
  const auto d = last_dim(x, "normalize");
  const auto rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel(), 0.0);
  std::vector<double> norms(rows, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
    norms[r] = std::sqrt(s);
    if (norms[r] > 0.0)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norms[r];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [d, rows, norms = std::move(norms)](Node& self) {
                       auto& gx = pgrad(self, 0);
                       const auto& y = self.value;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!(norms[r] > 0.0)) continue;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j)
                           dot += self.grad[r * d + j] * y[r * d + j];
                         for (std::size_t j = 0; j < d; ++j)
                           gx[r * d + j] += (self.grad[r * d + j] - dot * y[r * d + j]) / norms[r];
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("cosine_similarity: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  return sum_last(mul(normalize(a), normalize(b)));
}

Tensor pairwise_cosine(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(1)) {
    throw DimensionError("pairwise_cosine: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  return matmul(normalize(a), transpose(normalize(b)));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw DimensionError("gather_rows: rank 0 input");
  const auto n = x.size(0);
  const auto d = n ? x.numel() / n : 0;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * d);
  auto xv = x.data();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= n) throw DimensionError("gather_rows: index out of range");
    std::copy_n(&xv[rows[k] * d], d, &out[k * d]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(out_shape), std::move(out), {x},
                     [d, idx = std::move(idx)](Node& self) {
                       auto& g = pgrad(self, 0);
                       for (std::size_t k = 0; k < idx.size(); ++k)
                         for (std::size_t j = 0; j < d; ++j)
                           g[idx[k] * d + j] += self.grad[k * d + j];
                     });
}

Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> rows,
                        std::size_t out_rows) {
  if (x.rank() < 1 || x.size(0) != rows.size()) {
    throw DimensionError("scatter_add_rows: index count does not match rows of " +
                         shape_str(x.shape()));
  }
  const auto d = rows.empty() ? shape_numel(Shape(x.shape().begin() + 1, x.shape().end()))
                              : x.numel() / rows.size();
  Shape out_shape = x.shape();
  out_shape[0] = out_rows;
  std::vector<double> out(out_rows * d, 0.0);
  auto xv = x.data();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= out_rows) throw DimensionError("scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < d; ++j) out[rows[k] * d + j] += xv[k * d + j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(out_shape), std::move(out), {x},
                     [d, idx = std::move(idx)](Node& self) {
                       auto& g = pgrad(self, 0);
                       for (std::size_t k = 0; k < idx.size(); ++k)
                         for (std::size_t j = 0; j < d; ++j)
                           g[k * d + j] += self.grad[idx[k] * d + j];
                     });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  if (x.rank() != 2 || x.size(0) != cols.size()) {
    throw DimensionError("pick: expected [rows, cols] with one index per row, got " +
                         shape_str(x.shape()));
  }
  const auto c = x.size(1);
  std::vector<double> out(cols.size());
  auto xv = x.data();
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= c) throw DimensionError("pick: column index out of range");
    out[r] = xv[r * c + cols[r]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return make_result(Shape{cols.size()}, std::move(out), {x},
                     [c, idx = std::move(idx)](Node& self) {
                       auto& g = pgrad(self, 0);
                       for (std::size_t r = 0; r < idx.size(); ++r) g[r * c + idx[r]] += self.grad[r];
                     });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const auto& s0 = parts[0].shape();
  for (const auto& p : parts)
    if (p.shape() != s0) throw DimensionError("stack: inputs differ in shape");
  const auto each = parts[0].numel();
  std::vector<double> out;
  out.reserve(each * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{parts.size()};
  shape.insert(shape.end(), s0.begin(), s0.end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(shape), std::move(out), std::move(inputs), [each](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      auto& g = pgrad(self, i);
      for (std::size_t j = 0; j < each; ++j) g[j] += self.grad[i * each + j];
    }
  });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (x.rank() < 1 || index >= x.size(0)) throw DimensionError("select: index out of range");
  const auto each = x.numel() / x.size(0);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(index * each),
                          x.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * each));
  return make_result(std::move(shape), std::move(out), {x}, [index, each](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t j = 0; j < each; ++j) g[index * each + j] += self.grad[j];
  });
}

}  // namespace protoocc::ops
