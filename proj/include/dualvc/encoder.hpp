// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "dualvc/layers.hpp"

namespace dualvc {

struct EncoderConfig {
  std::size_t input_dim = 8;
  std::vector<std::size_t> bank_kernel_sizes = {1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t bank_channels = 8;
  std::size_t projection_channels = 32;
  std::size_t highway_layers = 4;
  std::size_t hidden = 32;
  std::size_t depthwise_kernel = 5;
  double dropout = 0.1;
  /// Adds a reverse-direction GRU, summed into the output, in non-streaming
  /// mode only.
  bool bidirectional_noncausal_gru = false;

  void validate() const {
    if (input_dim == 0 || bank_channels == 0 || projection_channels == 0 || hidden == 0 ||
        depthwise_kernel == 0)
      throw ConfigError("encoder sizes must be positive");
    if (bank_kernel_sizes.empty()) throw ConfigError("encoder bank must not be empty");
    std::set<std::size_t> seen;
    for (std::size_t k : bank_kernel_sizes) {
      if (k == 0) throw ConfigError("bank kernel sizes must be positive");
      if (!seen.insert(k).second) throw ConfigError("bank kernel sizes must be distinct");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }
};

/// Encoder result: the latent sequence and the mode that produced it.
template <typename T>
struct EncoderOutput {
  Var<T> latent;
  Mode mode;
};

/// Row order reversal (used only by the optional backward GRU).
template <typename T>
Var<T> reverse_rows(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  BasicTensor<T> out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) std::copy_n(xv.row(r).begin(), c, out.row(n - 1 - r).begin());
  return x.graph->record("reverse_rows", std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(x);
    const std::size_t n = gy.rows(), c = gy.cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k) gx(n - 1 - r, k) += gy(r, k);
  });
}

/// CBHG-style encoder built from dual-mode convolution blocks:
/// conv bank -> max pool -> two conv projections (+ input residual) ->
/// highway stack -> GRU.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng) : config(cfg) {
    cfg.validate();
    for (std::size_t k : cfg.bank_kernel_sizes)
      bank.emplace_back("encoder.bank" + std::to_string(k), cfg.input_dim, cfg.bank_channels, k,
                        cfg.dropout, rng);
    const std::size_t bank_width = cfg.bank_channels * cfg.bank_kernel_sizes.size();
    projection1 = DualModeConvBlock<T>("encoder.projection1", bank_width, cfg.projection_channels,
                                       cfg.depthwise_kernel, cfg.dropout, rng);
    projection2 = DualModeConvBlock<T>("encoder.projection2", cfg.projection_channels,
                                       cfg.input_dim, cfg.depthwise_kernel, cfg.dropout, rng);
    pre_highway = Linear<T>("encoder.pre_highway", ParamGroup::Shared, cfg.input_dim, cfg.hidden, rng);
    for (std::size_t i = 0; i < cfg.highway_layers; ++i)
      highways.emplace_back("encoder.highway" + std::to_string(i), ParamGroup::Shared, cfg.hidden, rng);
    gru = GruLayer<T>("encoder.gru", ParamGroup::Shared, cfg.hidden, cfg.hidden, rng);
    if (cfg.bidirectional_noncausal_gru)
      gru_backward = GruLayer<T>("encoder.gru_backward", ParamGroup::NonCausal, cfg.hidden, cfg.hidden, rng);
  }

  std::size_t bank_width() const { return config.bank_channels * bank.size(); }

  /// Bank, pooling, projections and residual: everything before the
  /// frame-wise highway stage.
  Var<T> convolution_stage(Graph<T>& g, Var<T> x, Mode mode, bool training, Rng& rng) {
    std::vector<Var<T>> outs;
    outs.reserve(bank.size());
    for (auto& block : bank) outs.push_back(block.forward(g, x, mode, training, rng));
    Var<T> h = ops::max_pool2(ops::concat_cols(outs), mode == Mode::Streaming);
    h = projection1.forward(g, h, mode, training, rng);
    h = projection2.forward(g, h, mode, training, rng);
    return ops::add(h, x);
  }

  Var<T> highway_stage(Graph<T>& g, Var<T> x) {
    Var<T> h = pre_highway.forward(g, x);
    for (auto& hw : highways) h = hw.forward(g, h);
    return h;
  }

  EncoderOutput<T> encode(Graph<T>& g, Var<T> features, Mode mode, bool training, Rng& rng) {
    const auto& fv = features.value();
    if (fv.rank() != 2 || fv.cols() != config.input_dim)
      throw ShapeError("encoder expects [T x " + std::to_string(config.input_dim) + "] input, got " +
                       shape_str(fv.shape()));
    Var<T> h = highway_stage(g, convolution_stage(g, features, mode, training, rng));
    Var<T> z = gru.forward(g, h);
    if (mode == Mode::NonStreaming && config.bidirectional_noncausal_gru)
      z = ops::add(z, reverse_rows(gru_backward.forward(g, reverse_rows(h))));
    return {z, mode};
  }

  void collect(ParamList<T>& out) {
    for (auto& b : bank) b.collect(out);
    projection1.collect(out);
    projection2.collect(out);
    pre_highway.collect(out);
    for (auto& h : highways) h.collect(out);
    gru.collect(out);
    if (config.bidirectional_noncausal_gru) gru_backward.collect(out);
  }

  EncoderConfig config;
  std::vector<DualModeConvBlock<T>> bank;
  DualModeConvBlock<T> projection1;
  DualModeConvBlock<T> projection2;
  Linear<T> pre_highway;
  std::vector<Highway<T>> highways;
  GruLayer<T> gru;
  GruLayer<T> gru_backward;
};

/// Smooth-L1 (beta = 1) between streaming latents Z and detached
/// non-streaming latents: no gradient reaches anything through the teacher.
template <typename T>
Var<T> distillation_loss(const EncoderOutput<T>& z_stream, const EncoderOutput<T>& z_nonstream) {
  if (z_stream.mode != Mode::Streaming || z_nonstream.mode != Mode::NonStreaming)
    throw ContractError("distillation_loss expects (streaming, non-streaming) encoder outputs");
  if (z_stream.latent.shape() != z_nonstream.latent.shape())
    throw ContractError("distillation_loss: latent shapes differ");
  return ops::smooth_l1(z_stream.latent, ops::detach(z_nonstream.latent));
}

}  // namespace dualvc
