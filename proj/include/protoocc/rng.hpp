// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace protoocc {

/// Counter-based generator (Philox4x32-10).
///
/// The output is a pure function of (key, counter), so a stream can be
/// checkpointed as two integers and split into independent named substreams
/// without consuming draws from the parent.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0);
  static Rng from_state(State s);

  /// Independent stream derived from this one's key and `stream_id`.
  Rng split(std::uint64_t stream_id) const;
  Rng split(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal draw (Box-Muller, no cached second value).
  double normal();

  State state() const { return {key_, counter_}; }

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t counter) const;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stable 64-bit FNV-1a hash, used to turn stream names into ids.
std::uint64_t stream_hash(std::string_view name);

}  // namespace protoocc
