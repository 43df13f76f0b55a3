// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace dualvc {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

/// Central finite-difference checks (64-bit) of every layer type and every
/// training loss on small random instances.
std::vector<GradSuiteEntry> run_gradient_suite(double tolerance = 1e-4);

}  // namespace dualvc
