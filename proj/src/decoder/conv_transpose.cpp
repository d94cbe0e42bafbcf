// SPDX-License-Identifier: Apache-2.0
#include "protoocc/decoder.hpp"
#include "protoocc/errors.hpp"

namespace protoocc::decoder {

using detail::Node;

Extents ConvGeometry::output(const Extents& input) const {
  validate();
  Extents out{};
  for (int a = 0; a < 3; ++a) {
    if (input[a] == 0) throw DimensionError("transposed convolution input has an empty axis");
    const std::size_t full = (input[a] - 1) * stride[a] + kernel[a];
    if (full <= 2 * padding[a]) throw DimensionError("padding removes the whole output");
    out[a] = full - 2 * padding[a];
  }
  return out;
}

void ConvGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ParameterError("kernel extent must be >= 1");
    if (stride[a] < 1) throw ParameterError("stride must be >= 1");
  }
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        const ConvGeometry& g) {
  if (x.rank() != 4 || kernel.rank() != 5 || kernel.size(0) != g.kernel[0] || kernel.size(1) != g.kernel[1] ||
      kernel.size(2) != g.kernel[2] || kernel.size(3) != x.size(3))
    throw DimensionError("conv_transpose3d: input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(kernel.shape()) + " do not match the geometry");
  const std::size_t cin = x.size(3), cout = kernel.size(4);
  if (bias.defined() && bias.shape() != Shape{cout})
    throw DimensionError("conv_transpose3d: bias must be [" + std::to_string(cout) + "]");
  const Extents in{x.size(0), x.size(1), x.size(2)};
  const Extents out_ext = g.output(in);

  // Every (input cell, tap) pair that lands inside the output.
  struct Link {
    std::size_t in, tap, out;
  };
  std::vector<Link> links;
  const std::size_t taps = g.kernel[0] * g.kernel[1] * g.kernel[2];
  links.reserve(in[0] * in[1] * in[2] * taps);
  for (std::size_t i = 0; i < in[0]; ++i)
    for (std::size_t j = 0; j < in[1]; ++j)
      for (std::size_t l = 0; l < in[2]; ++l)
        for (std::size_t a = 0; a < g.kernel[0]; ++a) {
          const auto oi = static_cast<std::ptrdiff_t>(i * g.stride[0] + a) - static_cast<std::ptrdiff_t>(g.padding[0]);
          if (oi < 0 || oi >= static_cast<std::ptrdiff_t>(out_ext[0])) continue;
          for (std::size_t b = 0; b < g.kernel[1]; ++b) {
            const auto oj = static_cast<std::ptrdiff_t>(j * g.stride[1] + b) - static_cast<std::ptrdiff_t>(g.padding[1]);
            if (oj < 0 || oj >= static_cast<std::ptrdiff_t>(out_ext[1])) continue;
            for (std::size_t c = 0; c < g.kernel[2]; ++c) {
              const auto ol = static_cast<std::ptrdiff_t>(l * g.stride[2] + c) - static_cast<std::ptrdiff_t>(g.padding[2]);
              if (ol < 0 || ol >= static_cast<std::ptrdiff_t>(out_ext[2])) continue;
              links.push_back({(i * in[1] + j) * in[2] + l, (a * g.kernel[1] + b) * g.kernel[2] + c,
                               (static_cast<std::size_t>(oi) * out_ext[1] + static_cast<std::size_t>(oj)) * out_ext[2] +
                                   static_cast<std::size_t>(ol)});
            }
          }
        }

  const std::size_t cells = out_ext[0] * out_ext[1] * out_ext[2];
  std::vector<double> out(cells * cout, 0.0);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t o = 0; o < cells; ++o)
      for (std::size_t co = 0; co < cout; ++co) out[o * cout + co] = bv[co];
  }
  const double* xv = x.data().data();
  const double* kv = kernel.data().data();
  for (const auto& link : links) {
    double* dst = out.data() + link.out * cout;
    const double* src = xv + link.in * cin;
    const double* w = kv + link.tap * cin * cout;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double s = src[ci];
      const double* row = w + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) dst[co] += s * row[co];
    }
  }

  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({out_ext[0], out_ext[1], out_ext[2], cout}, std::move(out), std::move(inputs),
                     [links = std::move(links), cin, cout, cells](Node& self) {
                       const auto& xv = self.parents[0]->value;
                       const auto& kv = self.parents[1]->value;
                       const double* gout = self.grad.data();
                       if (self.parents[0]->requires_grad) {
                         auto& gx = self.parents[0]->grad_buffer();
                         for (const auto& link : links) {
                           const double* go = gout + link.out * cout;
                           const double* w = kv.data() + link.tap * cin * cout;
                           double* dst = gx.data() + link.in * cin;
                           for (std::size_t ci = 0; ci < cin; ++ci) {
                             const double* row = w + ci * cout;
                             double acc = 0;
                             for (std::size_t co = 0; co < cout; ++co) acc += go[co] * row[co];
                             dst[ci] += acc;
                           }
                         }
                       }
                       if (self.parents[1]->requires_grad) {
                         auto& gk = self.parents[1]->grad_buffer();
                         for (const auto& link : links) {
                           const double* go = gout + link.out * cout;
                           const double* src = xv.data() + link.in * cin;
                           double* w = gk.data() + link.tap * cin * cout;
                           for (std::size_t ci = 0; ci < cin; ++ci) {
                             const double s = src[ci];
                             double* row = w + ci * cout;
                             for (std::size_t co = 0; co < cout; ++co) row[co] += s * go[co];
                           }
                         }
                       }
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (std::size_t o = 0; o < cells; ++o)
                           for (std::size_t co = 0; co < cout; ++co) gb[co] += gout[o * cout + co];
                       }
                     });
}

}  // namespace protoocc::decoder
