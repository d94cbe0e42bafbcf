// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "protoocc/decoder.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/ops.hpp"

namespace protoocc::decoder {

AugmentationCategory AugmentationSpec::category() const {
  return kind == AugmentationKind::random_dropout || kind == AugmentationKind::gaussian_noise
             ? AugmentationCategory::feature
             : AugmentationCategory::spatial;
}

void AugmentationSpec::validate() const {
  switch (kind) {
    case AugmentationKind::random_dropout:
      if (!(p >= 0 && p < 1)) throw ParameterError("dropout probability must lie in [0, 1)");
      break;
    case AugmentationKind::gaussian_noise:
      if (!(sigma >= 0)) throw ParameterError("noise sigma must be >= 0");
      break;
    case AugmentationKind::transpose:
      if (axes.size() != 2 || axes[0] > 2 || axes[1] > 2 || axes[0] == axes[1])
        throw ParameterError("transpose needs two distinct spatial axes from {0, 1, 2}");
      break;
    case AugmentationKind::flip: {
      if (axes.empty()) throw ParameterError("flip needs at least one spatial axis");
      std::array<bool, 3> seen{};
      for (auto a : axes) {
        if (a > 2 || seen[a]) throw ParameterError("flip axes must be distinct members of {0, 1, 2}");
        seen[a] = true;
      }
      break;
    }
  }
}

AugmentationSpec AugmentationSpec::dropout(double p) { return {AugmentationKind::random_dropout, p, 0.05, {}}; }
AugmentationSpec AugmentationSpec::noise(double sigma) { return {AugmentationKind::gaussian_noise, 0.1, sigma, {}}; }
AugmentationSpec AugmentationSpec::transpose(std::size_t a, std::size_t b) {
  return {AugmentationKind::transpose, 0.1, 0.05, {a, b}};
}
AugmentationSpec AugmentationSpec::flip(std::vector<std::size_t> axes) {
  return {AugmentationKind::flip, 0.1, 0.05, std::move(axes)};
}

std::string to_string(AugmentationKind kind) {
  switch (kind) {
    case AugmentationKind::random_dropout: return "random_dropout";
    case AugmentationKind::gaussian_noise: return "gaussian_noise";
    case AugmentationKind::transpose: return "transpose";
    case AugmentationKind::flip: return "flip";
  }
  return "?";
}

AugmentationKind augmentation_kind_from_string(const std::string& name) {
  for (auto k : {AugmentationKind::random_dropout, AugmentationKind::gaussian_noise, AugmentationKind::transpose,
                 AugmentationKind::flip})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown augmentation '" + name + "'");
}

void AugmentationPlan::validate() const {
  for (const auto& b : branches) {
    if (b.empty()) throw ParameterError("an augmented branch needs at least one spec");
    if (b.size() > 2) throw ParameterError("an augmented branch combines at most two specs");
    for (const auto& s : b) s.validate();
  }
}

AugmentationPlan AugmentationPlan::default_plan() {
  return {{{AugmentationSpec::dropout()}, {AugmentationSpec::noise()}}};
}

Tensor SpatialTransform::apply(const Tensor& grid) const {
  Tensor out = grid;
  for (const auto& s : steps) {
    if (s.swap) {
      std::vector<std::size_t> order(out.rank());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::swap(order[s.axes[0]], order[s.axes[1]]);
      out = ops::permute(out, order);
    } else {
      out = ops::flip(out, s.axes);
    }
  }
  return out;
}

Tensor SpatialTransform::invert(const Tensor& grid) const {
  // Every step is an involution, so the inverse replays them backwards.
  SpatialTransform reversed{{steps.rbegin(), steps.rend()}};
  return reversed.apply(grid);
}

Extents SpatialTransform::apply(Extents e) const {
  for (const auto& s : steps)
    if (s.swap) std::swap(e[s.axes[0]], e[s.axes[1]]);
  return e;
}

AugmentedGrid apply_augmentation(const Tensor& grid, const BranchSpec& specs, Rng& rng) {
  if (grid.rank() != 4) throw DimensionError("augmentation expects [h, w, z, C], got " + shape_str(grid.shape()));
  if (specs.size() > 2) throw ParameterError("an augmented branch combines at most two specs");
  AugmentedGrid out{grid, {}};
  for (const auto& spec : specs) {
    spec.validate();
    switch (spec.kind) {
      case AugmentationKind::random_dropout: {
        if (spec.p == 0) break;
        std::vector<double> keep(out.grid.numel());
        for (auto& k : keep) k = rng.uniform() < spec.p ? 0.0 : 1.0;
        out.grid = ops::mask(out.grid, keep);
        break;
      }
      case AugmentationKind::gaussian_noise: {
        if (spec.sigma == 0) break;
        const auto v = out.grid.data();
        double mean = 0, var = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        for (double x : v) var += (x - mean) * (x - mean);
        const double scale = spec.sigma * std::sqrt(var / static_cast<double>(v.size()));
        std::vector<double> noise(v.size());
        for (auto& n : noise) n = scale * rng.normal();
        out.grid = ops::add(out.grid, Tensor(out.grid.shape(), std::move(noise)));
        break;
      }
      case AugmentationKind::transpose: {
        if (out.grid.size(spec.axes[0]) != out.grid.size(spec.axes[1]))
          throw ParameterError("transpose needs equal extents on the swapped axes");
        SpatialTransform::Step step{true, spec.axes};
        out.grid = SpatialTransform{{step}}.apply(out.grid);
        out.transform.steps.push_back(step);
        break;
      }
      case AugmentationKind::flip: {
        SpatialTransform::Step step{false, spec.axes};
        out.grid = SpatialTransform{{step}}.apply(out.grid);
        out.transform.steps.push_back(step);
        break;
      }
    }
  }
  return out;
}

}  // namespace protoocc::decoder
