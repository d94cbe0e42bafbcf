// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "protoocc/tensor.hpp"

namespace protoocc {

struct GradCheckElement {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckElement> per_element;
};

inline constexpr double kGradCheckFloor = 1e-8;

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, for every element of every input.
///
/// rel_err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws ParameterError for eps outside [1e-7, 1e-3] and EvaluationError when
/// f is non-finite at x.
GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> inputs, double eps = 1e-6);
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-6);

}  // namespace protoocc
