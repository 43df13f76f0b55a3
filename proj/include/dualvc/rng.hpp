// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dualvc/tensor.hpp"

namespace dualvc {

/// Reproducible random source.
///
/// Bits come from the standard 64-bit Mersenne Twister (`std::mt19937_64`),
/// whose output sequence is fixed by the C++ standard. Distributions are
/// computed here rather than through `<random>` distribution objects, whose
/// algorithms differ between standard libraries:
///   - uniform(): top 53 bits of one draw scaled by 2^-53, in [0, 1)
///   - normal():  Box-Muller on two uniforms, both outputs used in order
///   - index(n):  rejection sampling on the raw 64-bit draw
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Independent child stream, derived from this stream's next draw.
  Rng split() { return Rng(next_u64()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// I.i.d. Gaussian samples of the given shape.
template <typename T = float>
BasicTensor<T> seeded_normal(Rng& rng, const Shape& shape, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ArgumentError("seeded_normal: std must be non-negative");
  BasicTensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(mean + stddev * rng.normal());
  return out;
}

template <typename T = float>
BasicTensor<T> seeded_uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  BasicTensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return out;
}

}  // namespace dualvc
