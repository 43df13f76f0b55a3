// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dualvc/layers.hpp"

namespace dualvc {

/// How contrastive negatives are drawn.
enum class NegativeStrategy {
  /// Uniform over the other frames of the same utterance.
  WithinUtterance,
};

struct HpcConfig {
  std::size_t steps = 4;             // prediction horizon m
  std::size_t negatives = 8;         // negatives per positive
  std::size_t gnet_hidden = 32;
  NegativeStrategy strategy = NegativeStrategy::WithinUtterance;
  bool apc_detach_targets = true;
  /// Score candidates against a stop-gradient copy of the latents.
  bool cpc_detach_candidates = true;
  bool use_cpc = true;
  bool use_apc = true;

  void validate() const {
    if (steps == 0) throw ConfigError("hpc: prediction steps must be >= 1");
    if (negatives == 0) throw ConfigError("hpc: negatives must be >= 1");
    if (gnet_hidden == 0) throw ConfigError("hpc: g-net hidden size must be positive");
  }
};

/// `count` distinct frame indices drawn uniformly from [0, frames) without
/// `positive`.
std::vector<std::size_t> sample_negatives(Rng& rng, std::size_t frames, std::size_t positive,
                                          std::size_t count);

/// Contrastive head: a GRU aggregates the latents and a bilinear score
/// z' . (W_j r_t) ranks the true latent j steps ahead against negatives.
template <typename T>
class CpcHead {
 public:
  CpcHead() = default;
  CpcHead(const HpcConfig& cfg, std::size_t latent_dim, Rng& rng)
      : gnet("hpc.cpc.gnet", ParamGroup::Predictive, latent_dim, cfg.gnet_hidden, rng) {
    for (std::size_t j = 1; j <= cfg.steps; ++j)
      scores.emplace_back("hpc.cpc.score" + std::to_string(j), ParamGroup::Predictive,
                          cfg.gnet_hidden, latent_dim, rng, false);
  }

  std::size_t steps() const { return scores.size(); }

  void collect(ParamList<T>& out) {
    gnet.collect(out);
    for (auto& s : scores) s.collect(out);
  }

  GruLayer<T> gnet;
  std::vector<Linear<T>> scores;
};

/// Autoregressive head: a GRU aggregates the latents and P_j regresses the
/// latent j steps ahead.
template <typename T>
class ApcHead {
 public:
  ApcHead() = default;
  ApcHead(const HpcConfig& cfg, std::size_t latent_dim, Rng& rng)
      : gnet("hpc.apc.gnet", ParamGroup::Predictive, latent_dim, cfg.gnet_hidden, rng) {
    for (std::size_t j = 1; j <= cfg.steps; ++j)
      predictors.emplace_back("hpc.apc.predict" + std::to_string(j), ParamGroup::Predictive,
                              cfg.gnet_hidden, latent_dim, rng);
  }

  std::size_t steps() const { return predictors.size(); }

  void collect(ParamList<T>& out) {
    gnet.collect(out);
    for (auto& p : predictors) p.collect(out);
  }

  GruLayer<T> gnet;
  std::vector<Linear<T>> predictors;
};

/// InfoNCE averaged over every (t, j) with t + j inside the sequence.
template <typename T>
Var<T> cpc_loss(Graph<T>& g, CpcHead<T>& head, Var<T> z, std::size_t negatives, Rng& rng,
                bool detach_candidates = true) {
  const std::size_t frames = z.value().rows();
  const std::size_t m = head.steps();
  if (frames <= m + 1)
    throw InsufficientContextError("cpc_loss: " + std::to_string(frames) +
                                   " frames is insufficient context for " + std::to_string(m) +
                                   " prediction steps");
  Var<T> r = head.gnet.forward(g, z);
  std::vector<Var<T>> preds;
  std::vector<std::size_t> index;
  for (std::size_t j = 1; j <= m; ++j) {
    preds.push_back(head.scores[j - 1].forward(g, ops::slice_rows(r, 0, frames - j)));
    for (std::size_t t = 0; t + j < frames; ++t) {
      index.push_back(t + j);
      for (std::size_t n : sample_negatives(rng, frames, t + j, negatives)) index.push_back(n);
    }
  }
  Var<T> s = ops::gather_dot(ops::concat_rows(preds), detach_candidates ? ops::detach(z) : z,
                            std::move(index), negatives + 1);
  return ops::nce_first(s);
}

/// L1 between P_j(r_t) and z_{t+j}, averaged over valid (t, j) and channels.
template <typename T>
Var<T> apc_loss(Graph<T>& g, ApcHead<T>& head, Var<T> z, bool detach_targets = true) {
  const std::size_t frames = z.value().rows();
  const std::size_t m = head.steps();
  if (frames <= m)
    throw InsufficientContextError("apc_loss: " + std::to_string(frames) +
                                   " frames is insufficient context for " + std::to_string(m) +
                                   " prediction steps");
  Var<T> r = head.gnet.forward(g, z);
  Var<T> target_src = detach_targets ? ops::detach(z) : z;
  std::vector<Var<T>> preds, targets;
  for (std::size_t j = 1; j <= m; ++j) {
    preds.push_back(head.predictors[j - 1].forward(g, ops::slice_rows(r, 0, frames - j)));
    targets.push_back(ops::slice_rows(target_src, j, frames));
  }
  return ops::l1(ops::concat_rows(preds), ops::concat_rows(targets));
}

/// Per-term HPC losses; `total` is exactly cpc + apc.
template <typename T>
struct HpcLoss {
  Var<T> cpc;
  Var<T> apc;
  Var<T> total;
};

template <typename T>
HpcLoss<T> hpc_loss(Graph<T>& g, CpcHead<T>& cpc, ApcHead<T>& apc, Var<T> z,
                    const HpcConfig& cfg, Rng& rng) {
  if (cpc.steps() != apc.steps()) throw ConfigError("hpc heads disagree on prediction steps");
  const auto zero = [&] { return g.constant(BasicTensor<T>({1})); };
  Var<T> c = cfg.use_cpc ? cpc_loss(g, cpc, z, cfg.negatives, rng, cfg.cpc_detach_candidates) : zero();
  Var<T> a = cfg.use_apc ? apc_loss(g, apc, z, cfg.apc_detach_targets) : zero();
  return {c, a, ops::add(c, a)};
}

}  // namespace dualvc
