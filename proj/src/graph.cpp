// SPDX-License-Identifier: Apache-2.0
#include "dualvc/graph.hpp"

namespace dualvc {

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Shared: return "shared";
    case ParamGroup::Causal: return "causal";
    case ParamGroup::NonCausal: return "noncausal";
    case ParamGroup::Autoregressive: return "autoregressive";
    case ParamGroup::Predictive: return "predictive";
  }
  return "unknown";
}

}  // namespace dualvc
