// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "protoocc/rng.hpp"
#include "protoocc/tensor.hpp"

namespace protoocc {

enum class Activation { identity, relu };

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Activation activation = Activation::identity;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  /// Throws DimensionError if consecutive layers do not compose.
  void validate() const;
  std::vector<Tensor> parameters() const;

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero biases. `dims` has one more
  /// entry than `activations`.
  static MlpParams init(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& activations, Rng& rng);
};

/// Applies the layers along the trailing axis of x.
Tensor mlp_forward(const MlpParams& params, const Tensor& x);

}  // namespace protoocc
