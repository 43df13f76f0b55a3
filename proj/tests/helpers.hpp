// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "dualvc/graph.hpp"
#include "dualvc/rng.hpp"

namespace testing {

inline dualvc::Tensor64 random64(std::uint64_t seed, dualvc::Shape shape, double scale = 1.0) {
  dualvc::Rng rng(seed);
  return dualvc::seeded_normal<double>(rng, shape, 0.0, scale);
}

inline dualvc::Tensor random32(std::uint64_t seed, dualvc::Shape shape, double scale = 1.0) {
  dualvc::Rng rng(seed);
  return dualvc::seeded_normal<float>(rng, shape, 0.0, scale);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dualvc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string data_path(const std::string& name) { return std::string(DUALVC_TEST_DATA) + "/" + name; }

}  // namespace testing
