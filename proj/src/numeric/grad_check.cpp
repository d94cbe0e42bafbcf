// SPDX-License-Identifier: Apache-2.0
#include "protoocc/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "protoocc/errors.hpp"

namespace protoocc {

namespace {

double eval_scalar(const ScalarFn& f, std::span<const Tensor> inputs) {
  const Tensor y = f(inputs);
  if (y.numel() != 1) throw DimensionError("grad_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ParameterError("grad_check: eps must lie in [1e-7, 1e-3]");

  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Tensor(t.shape(), {t.data().begin(), t.data().end()}, true));

  const Tensor y = f(leaves);
  if (y.numel() != 1) throw DimensionError("grad_check: function must return a scalar");
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: function value is not finite");
  y.backward();

  GradCheckReport report;
  std::vector<Tensor> probe;
  for (const auto& t : leaves) probe.push_back(t.detach());

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    auto values = probe[i].data_mut();
    const auto analytic = leaves[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + eps;
      const double fp = eval_scalar(f, probe);
      values[j] = orig - eps;
      const double fm = eval_scalar(f, probe);
      values[j] = orig;
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = analytic.empty() ? 0.0 : analytic[j];
      const double denom = std::max({std::abs(ana), std::abs(num), kGradCheckFloor});
      const double rel = std::abs(ana - num) / denom;
      report.per_element.push_back({i, j, ana, num, rel});
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps) {
  const Tensor inputs[1] = {x};
  return grad_check([&f](std::span<const Tensor> in) { return f(in[0]); }, inputs, eps);
}

}  // namespace protoocc
