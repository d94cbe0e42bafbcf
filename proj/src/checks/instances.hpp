// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>

#include "protoocc/camera.hpp"
#include "protoocc/clustering.hpp"
#include "protoocc/mlp.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/rng.hpp"

// Random small instances shared by the gradient and oracle suites.
namespace protoocc::checks {

inline Tensor random_tensor(Shape shape, Rng& rng, bool grad = false, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), grad);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_int(hi - lo + 1); }

/// Scalar probe: sum(t * w) for fixed random weights w.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(t, random_tensor(t.shape(), rng)));
}

/// Slots with a random subset invalid; a few valid slots project just outside
/// the image so the mapping has something to drop. `keep_one` forces a valid
/// first slot in every view.
inline scene::HitSet random_hits(std::size_t views, std::size_t capacity, std::size_t cells, Rng& rng,
                                 bool keep_one = false) {
  scene::HitSet h;
  h.capacity = capacity;
  for (std::size_t v = 0; v < views; ++v) {
    std::vector<scene::HitSlot> slots;
    for (std::size_t s = 0; s < capacity; ++s) {
      scene::HitSlot slot;
      slot.query_index = rng.uniform_int(cells);
      slot.qx = rng.uniform() < 0.1 ? 1.0 : rng.uniform();
      slot.qy = rng.uniform();
      slot.depth = rng.uniform(1, 5);
      slot.valid = rng.uniform() < 0.8 || (keep_one && s == 0);
      slots.push_back(slot);
    }
    h.views.push_back(std::move(slots));
  }
  return h;
}

inline std::vector<double> valid_flags(const scene::HitSet& h) {
  std::vector<double> out;
  for (std::size_t v = 0; v < h.num_views(); ++v) {
    const auto m = h.valid_mask(v);
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

inline clustering::PseudoMaskSet random_masks(std::size_t views, std::size_t h, std::size_t w, std::size_t s,
                                              Rng& rng) {
  clustering::PseudoMaskSet m;
  m.height = h;
  m.width = w;
  m.num_masks = s;
  for (std::size_t v = 0; v < views; ++v) {
    std::vector<std::int32_t> ids(h * w);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.uniform_int(s));
    m.ids.push_back(std::move(ids));
  }
  return m;
}

inline MlpParams random_mlp(std::size_t d, Rng& rng) {
  return MlpParams{{DenseLayer{random_tensor({d, d}, rng, true), random_tensor({d}, rng, true), Activation::relu},
                    DenseLayer{random_tensor({d, d}, rng, true), random_tensor({d}, rng, true),
                               Activation::identity}}};
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace protoocc::checks
