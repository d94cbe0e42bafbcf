// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "protoocc/tensor.hpp"

// Differentiable whole-tensor operations.
//
// Broadcasting is restricted to suffix rules: in binary ops the second operand
// may have a shape equal to a trailing suffix of the first (e.g. a bias [d]
// added to [n, d]). `scale_rows` broadcasts a prefix-shaped factor instead.
namespace protoocc::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

/// out[i..., j] = x[i..., j] * s[i...]; s has the shape of x without its last axis.
Tensor scale_rows(const Tensor& x, const Tensor& s);

/// Multiplies by a constant (non-differentiable) elementwise mask of equal size.
Tensor mask(const Tensor& x, std::span<const double> m);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log with inputs clamped below at `floor`; clamped entries get zero gradient.
Tensor log(const Tensor& x, double floor = 1e-300);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over the trailing axis.
Tensor sum_last(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[..., in] -> x W^T + b over the trailing axis; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor flip(const Tensor& x, std::span<const std::size_t> axes);

/// Softmax of x / tau over the trailing axis, stabilised by max subtraction.
Tensor softmax(const Tensor& x, double tau = 1.0);
Tensor log_softmax(const Tensor& x, double tau = 1.0);

/// Unit-normalises along the trailing axis; zero vectors map to zero.
Tensor normalize(const Tensor& x);
/// Cosine similarity over the trailing axis. Zero-norm operands give 0.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
/// [m, d] x [n, d] -> [m, n] cosine table.
Tensor pairwise_cosine(const Tensor& a, const Tensor& b);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> rows, std::size_t out_rows);
/// [r, c] -> [r]: out[i] = x[i, cols[i]].
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);

Tensor stack(std::span<const Tensor> parts);
/// Leading-axis slice x[index].
Tensor select(const Tensor& x, std::size_t index);

}  // namespace protoocc::ops
