// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dualvc/graph.hpp"

namespace dualvc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Relative discrepancy used throughout: |a - n| / max(|a|, |n|, 1e-6). The
/// floor keeps coordinates whose gradient is at the finite-difference noise
/// level (about 1e-12 at eps 1e-4) from dominating.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar function of `params` with
/// central differences. `loss` builds the function on a fresh graph each
/// call; it must be deterministic. `stride` > 1 samples every stride-th
/// coordinate of each parameter.
inline GradCheckResult grad_check_params(
    const std::function<Var<double>(Graph<double>&)>& loss,
    const std::vector<Parameter<double>*>& params, double eps = 1e-4, std::size_t stride = 1) {
  if (!(eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");
  for (auto* p : params) p->zero_grad();
  // Detached values are held at their unperturbed values during the
  // perturbed evaluations, matching the stop-gradient derivative.
  std::vector<Tensor64> frozen;
  {
    Graph<double> g;
    g.capture_detached();
    Var<double> out = loss(g);
    if (out.value().size() != 1) throw ContractError("grad_check: function is not scalar-valued");
    g.backward(out);
    frozen = g.captured_detached();
  }
  auto eval = [&] {
    Graph<double> g(false);
    g.freeze_detached(frozen);
    return loss(g).value()[0];
  };
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); i += std::max<std::size_t>(stride, 1)) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double up = eval();
      p.value[i] = saved - eps;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(p.grad[i], numeric);
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_index = i;
      }
    }
  }
  return res;
}

/// Gradient check of `op` with respect to its input tensors.
inline double grad_check(
    const std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>& op,
    const std::vector<Tensor64>& inputs, double eps = 1e-4) {
  std::vector<Parameter<double>> holders;
  holders.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    holders.emplace_back("input" + std::to_string(i), ParamGroup::Shared, inputs[i]);
  std::vector<Parameter<double>*> ptrs;
  for (auto& h : holders) ptrs.push_back(&h);
  return grad_check_params(
             [&](Graph<double>& g) {
               std::vector<Var<double>> vars;
               for (auto& h : holders) vars.push_back(g.param(h));
               return op(g, vars);
             },
             ptrs, eps)
      .max_rel_error;
}

}  // namespace dualvc
