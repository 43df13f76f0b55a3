// SPDX-License-Identifier: Apache-2.0
#include "dualvc/hpc.hpp"

#include <numeric>

namespace dualvc {

std::vector<std::size_t> sample_negatives(Rng& rng, std::size_t frames, std::size_t positive,
                                          std::size_t count) {
  if (frames <= count)
    throw ConfigError("sample_negatives: need more than " + std::to_string(count) +
                      " frames, got " + std::to_string(frames));
  if (positive >= frames) throw ArgumentError("sample_negatives: positive index out of range");
  // Partial Fisher-Yates over the candidates, which skip the positive.
  std::vector<std::size_t> pool(frames - 1);
  std::iota(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(positive), std::size_t{0});
  std::iota(pool.begin() + static_cast<std::ptrdiff_t>(positive), pool.end(), positive + 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace dualvc
