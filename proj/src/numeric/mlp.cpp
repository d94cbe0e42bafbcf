// SPDX-License-Identifier: Apache-2.0
#include "protoocc/mlp.hpp"

#include <cmath>

#include "protoocc/errors.hpp"
#include "protoocc/ops.hpp"

namespace protoocc {

std::size_t MlpParams::in_dim() const {
  return layers.empty() ? 0 : layers.front().weight.size(1);
}

std::size_t MlpParams::out_dim() const {
  return layers.empty() ? 0 : layers.back().weight.size(0);
}

void MlpParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2) throw DimensionError("mlp layer " + std::to_string(i) + ": weight must be rank 2");
    if (l.bias.defined() && l.bias.shape() != Shape{l.weight.size(0)}) {
      throw DimensionError("mlp layer " + std::to_string(i) + ": bias " +
                           shape_str(l.bias.shape()) + " vs weight " + shape_str(l.weight.shape()));
    }
    if (i > 0 && layers[i - 1].weight.size(0) != l.weight.size(1)) {
      throw DimensionError("mlp layer " + std::to_string(i) + " expects input " +
                           std::to_string(l.weight.size(1)) + " but previous layer outputs " +
                           std::to_string(layers[i - 1].weight.size(0)));
    }
  }
}

std::vector<Tensor> MlpParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    if (l.bias.defined()) out.push_back(l.bias);
  }
  return out;
}

MlpParams MlpParams::init(const std::vector<std::size_t>& dims,
                          const std::vector<Activation>& activations, Rng& rng) {
  if (dims.size() != activations.size() + 1) {
    throw DimensionError("MlpParams::init: need one more dim than activations");
  }
  MlpParams p;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    const auto in = dims[i], out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    p.layers.push_back({Tensor({out, in}, std::move(w), true), Tensor::zeros({out}, true),
                        activations[i]});
  }
  return p;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& x) {
  params.validate();
  if (params.layers.empty()) return x;
  if (x.rank() == 0 || x.shape().back() != params.in_dim()) {
    throw DimensionError("mlp_forward: input " + shape_str(x.shape()) +
                         " does not match first layer weight " +
                         shape_str(params.layers.front().weight.shape()));
  }
  Tensor h = x;
  for (const auto& l : params.layers) {
    h = ops::linear(h, l.weight, l.bias);
    if (l.activation == Activation::relu) h = ops::relu(h);
  }
  return h;
}

}  // namespace protoocc
