// SPDX-License-Identifier: Apache-2.0
#include "protoocc/decoder.hpp"

#include <cmath>
#include <limits>

#include "protoocc/errors.hpp"
#include "protoocc/ops.hpp"

namespace protoocc::decoder {

namespace {

std::string extents_str(const Extents& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

}  // namespace

DecoderConfig DecoderConfig::default_for(const Extents& query, const Extents& occupancy, std::size_t d,
                                         std::size_t classes) {
  Extents factor{};
  for (int a = 0; a < 3; ++a) {
    if (query[a] == 0 || occupancy[a] % query[a] != 0)
      throw ConfigError("occupancy extents " + extents_str(occupancy) + " are not a multiple of query extents " +
                        extents_str(query));
    factor[a] = occupancy[a] / query[a];
    if ((factor[a] & (factor[a] - 1)) != 0)
      throw ConfigError("upsampling factor per axis must be a power of two, got " + std::to_string(factor[a]));
  }
  DecoderConfig cfg;
  cfg.classes = classes;
  cfg.stages.push_back({{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}}, d});
  std::size_t channels = std::max<std::size_t>(d / 2, 8);
  while (factor[0] > 1 || factor[1] > 1 || factor[2] > 1) {
    Extents s{};
    for (int a = 0; a < 3; ++a) {
      s[a] = factor[a] > 1 ? 2 : 1;
      factor[a] /= s[a];
    }
    cfg.stages.push_back({{s, s, {0, 0, 0}}, channels});
  }
  return cfg;
}

Extents DecoderConfig::output(const Extents& input) const {
  Extents e = input;
  for (const auto& s : stages) e = s.geometry.output(e);
  return e;
}

std::vector<Tensor> DecoderParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.kernel);
    out.push_back(l.bias);
  }
  for (auto& t : classifier.parameters()) out.push_back(t);
  return out;
}

DecoderParams DecoderParams::init(const DecoderConfig& cfg, std::size_t in_channels, Rng& rng) {
  if (cfg.classes < 2) throw ConfigError("decoder needs at least two classes");
  DecoderParams p;
  std::size_t channels = in_channels;
  for (const auto& stage : cfg.stages) {
    stage.geometry.validate();
    if (stage.out_channels == 0) throw ConfigError("decoder stage needs out_channels >= 1");
    const auto& k = stage.geometry.kernel;
    const auto& s = stage.geometry.stride;
    const double taps_per_output = static_cast<double>(k[0] * k[1] * k[2]) / static_cast<double>(s[0] * s[1] * s[2]);
    const double bound = std::sqrt(6.0 / (static_cast<double>(channels) * std::max(1.0, taps_per_output)));
    std::vector<double> w(k[0] * k[1] * k[2] * channels * stage.out_channels);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    p.layers.push_back({Tensor({k[0], k[1], k[2], channels, stage.out_channels}, std::move(w), true),
                        Tensor::zeros({stage.out_channels}, true), stage.geometry});
    channels = stage.out_channels;
  }
  p.classifier = MlpParams::init({channels, cfg.classes}, {Activation::identity}, rng);
  return p;
}

Tensor decode_branch(const Tensor& grid, const SpatialTransform& inverse, const DecoderParams& params,
                     const Extents& expected) {
  if (grid.rank() != 4) throw DimensionError("decode_branch expects [h, w, z, C], got " + shape_str(grid.shape()));
  Tensor x = grid;
  // The last stage stays linear: a dead relu there would leave the classifier only its bias.
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& layer = params.layers[i];
    x = conv_transpose3d(x, layer.kernel, layer.bias, layer.geometry);
    if (i + 1 < params.layers.size()) x = ops::relu(x);
  }
  x = inverse.invert(x);
  const Extents got{x.size(0), x.size(1), x.size(2)};
  if (got != expected)
    throw DimensionError("decoder produced " + extents_str(got) + ", expected " + extents_str(expected));
  const std::size_t cells = got[0] * got[1] * got[2];
  return ops::softmax(mlp_forward(params.classifier, ops::reshape(x, {cells, x.size(3)})));
}

Tensor sharpen(const Tensor& probs, double tau) {
  if (!(tau > 0)) throw ParameterError("sharpen: tau_cons must be > 0");
  if (probs.rank() < 1 || probs.shape().back() == 0) throw DimensionError("sharpen: expected [..., L]");
  const std::size_t l = probs.shape().back(), rows = probs.numel() / l;
  const auto v = probs.data();
  std::vector<double> out(v.size());
  std::vector<double> logs(l);
  for (std::size_t r = 0; r < rows; ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < l; ++c) {
      const double p = v[r * l + c];
      if (!(p >= 0)) throw ParameterError("sharpen: probabilities must be non-negative");
      logs[c] = p > 0 ? std::log(p) / tau : -std::numeric_limits<double>::infinity();
      top = std::max(top, logs[c]);
    }
    if (top == -std::numeric_limits<double>::infinity()) throw ParameterError("sharpen: all-zero distribution");
    double z = 0;
    for (std::size_t c = 0; c < l; ++c) z += (out[r * l + c] = std::exp(logs[c] - top));
    for (std::size_t c = 0; c < l; ++c) out[r * l + c] /= z;
  }
  return Tensor(probs.shape(), std::move(out));
}

namespace {

void check_branches(std::span<const Tensor> branches) {
  if (branches.empty()) throw DimensionError("consistency_loss: no branches");
  const auto& shape = branches[0].shape();
  if (shape.size() < 1) throw DimensionError("consistency_loss: expected [cells, L]");
  for (const auto& b : branches)
    if (b.shape() != shape)
      throw DimensionError("consistency_loss: branch shape " + shape_str(b.shape()) + " differs from " + shape_str(shape));
}

}  // namespace

Tensor consistency_target(std::span<const Tensor> branches, double tau) {
  check_branches(branches);
  const std::size_t n = branches[0].numel();
  std::vector<double> avg(n, 0.0);
  for (const auto& b : branches) {
    const auto v = b.data();
    for (std::size_t i = 0; i < n; ++i) avg[i] += v[i];
  }
  for (auto& a : avg) a /= static_cast<double>(branches.size());
  return sharpen(Tensor(branches[0].shape(), std::move(avg)), tau);
}

Tensor consistency_loss_to(std::span<const Tensor> branches, const Tensor& target) {
  check_branches(branches);
  if (target.shape() != branches[0].shape()) throw DimensionError("consistency_loss: target shape mismatch");
  const std::size_t cells = target.numel() / target.shape().back();
  const Tensor fixed = target.detach();
  Tensor total;
  for (const auto& b : branches) {
    const Tensor term = ops::sum(ops::square(ops::sub(b, fixed)));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0 / static_cast<double>(cells * branches.size()));
}

Tensor consistency_loss(std::span<const Tensor> branches, double tau) {
  return consistency_loss_to(branches, consistency_target(branches, tau));
}

double mean_pairwise_disagreement(std::span<const Tensor> branches) {
  if (branches.size() < 2) return 0.0;
  const auto& shape = branches[0].shape();
  for (const auto& b : branches)
    if (b.shape() != shape) throw DimensionError("disagreement: branch shapes differ");
  const std::size_t l = shape.back(), cells = branches[0].numel() / l;
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < branches.size(); ++p)
    for (std::size_t q = p + 1; q < branches.size(); ++q, ++pairs) {
      const auto a = branches[p].data(), b = branches[q].data();
      for (std::size_t c = 0; c < cells; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < l; ++k) s += (a[c * l + k] - b[c * l + k]) * (a[c * l + k] - b[c * l + k]);
        total += std::sqrt(s);
      }
    }
  return total / static_cast<double>(cells * pairs);
}

}  // namespace protoocc::decoder
