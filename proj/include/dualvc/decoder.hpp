// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dualvc/context.hpp"
#include "dualvc/layers.hpp"

namespace dualvc {

struct DecoderConfig {
  std::size_t latent_dim = 32;
  std::size_t n_speakers = 4;
  std::size_t speaker_dim = 16;
  std::size_t conv_blocks = 2;
  std::size_t conv_channels = 32;
  std::size_t depthwise_kernel = 5;
  std::vector<std::size_t> prenet = {128, 64};
  std::size_t gru_hidden = 64;
  std::size_t output_dim = 16;
  double dropout = 0.1;
  /// Std of the Gaussian noise added to teacher-forced previous frames.
  double ar_input_noise_std = 1.0;
  /// Std of the Gaussian noise added to autoregressive-module gradients.
  double grad_noise_std = 1e-3;

  void validate() const {
    if (latent_dim == 0 || n_speakers == 0 || speaker_dim == 0 || conv_channels == 0 ||
        depthwise_kernel == 0 || gru_hidden == 0 || output_dim == 0)
      throw ConfigError("decoder sizes must be positive");
    if (prenet.empty()) throw ConfigError("decoder prenet needs at least one layer");
    for (std::size_t p : prenet)
      if (p == 0) throw ConfigError("decoder prenet sizes must be positive");
    if (ar_input_noise_std < 0.0 || grad_noise_std < 0.0)
      throw ConfigError("decoder noise stds must be non-negative");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }
};

/// Per-utterance decoding state for frame-by-frame generation.
template <typename T>
struct DecoderState {
  std::vector<ContextRing<T>> conv_context;
  BasicTensor<T> hidden;      // [gru_hidden]
  BasicTensor<T> prev_frame;  // [output_dim], zero at the start

  friend bool operator==(const DecoderState& a, const DecoderState& b) {
    if (a.conv_context.size() != b.conv_context.size()) return false;
    for (std::size_t i = 0; i < a.conv_context.size(); ++i)
      if (a.conv_context[i].frames() != b.conv_context[i].frames()) return false;
    return a.hidden == b.hidden && a.prev_frame == b.prev_frame;
  }
};

/// Autoregressive decoder.
///
/// The dual-mode conv stack conditions on [latent ; speaker embedding]. The
/// autoregressive part (prenet on the previous frame, GRU, output
/// projection) consumes one conditioned frame at a time, so free-running
/// generation is possible in both modes.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& cfg, Rng& rng) : config(cfg) {
    cfg.validate();
    speakers = Parameter<T>("decoder.speakers", ParamGroup::Shared,
                            seeded_normal<T>(rng, {cfg.n_speakers, cfg.speaker_dim}, 0.0, 1.0));
    std::size_t in = cfg.latent_dim + cfg.speaker_dim;
    for (std::size_t i = 0; i < cfg.conv_blocks; ++i) {
      conv.emplace_back("decoder.conv" + std::to_string(i), in, cfg.conv_channels,
                        cfg.depthwise_kernel, cfg.dropout, rng);
      in = cfg.conv_channels;
    }
    std::size_t p_in = cfg.output_dim;
    for (std::size_t i = 0; i < cfg.prenet.size(); ++i) {
      prenet.emplace_back("decoder.prenet" + std::to_string(i), ParamGroup::Autoregressive, p_in,
                          cfg.prenet[i], rng);
      p_in = cfg.prenet[i];
    }
    gru = GruLayer<T>("decoder.gru", ParamGroup::Autoregressive, condition_dim() + p_in, cfg.gru_hidden, rng);
    output = Linear<T>("decoder.output", ParamGroup::Autoregressive, cfg.gru_hidden, cfg.output_dim, rng);
  }

  /// Width of a conditioned frame: conv stack output followed by the raw
  /// latent and speaker vector.
  std::size_t condition_dim() const {
    return (config.conv_blocks ? config.conv_channels : 0) + config.latent_dim + config.speaker_dim;
  }

  /// Blocks whose input width equals their output width are residual.
  bool residual_block(std::size_t i) const {
    const std::size_t in = i == 0 ? config.latent_dim + config.speaker_dim : config.conv_channels;
    return in == config.conv_channels;
  }

  void check_speaker(std::size_t id) const {
    if (id >= config.n_speakers)
      throw ArgumentError("unknown speaker id " + std::to_string(id) + " (have " +
                          std::to_string(config.n_speakers) + ")");
  }

  BasicTensor<T> speaker_embedding(std::size_t id) const {
    check_speaker(id);
    return BasicTensor<T>({config.speaker_dim}, std::vector<T>(speakers.value.row(id).begin(),
                                                              speakers.value.row(id).end()));
  }

  /// Conv stack over [latents ; speaker].
  Var<T> condition(Graph<T>& g, Var<T> latents, Var<T> speaker_rows, Mode mode, bool training, Rng& rng) {
    if (latents.value().cols() != config.latent_dim)
      throw ShapeError("decoder expects latent width " + std::to_string(config.latent_dim));
    Var<T> x = ops::concat_cols(std::vector<Var<T>>{latents, speaker_rows});
    if (conv.empty()) return x;
    Var<T> h = x;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      Var<T> out = conv[i].forward(g, h, mode, training, rng);
      h = residual_block(i) ? ops::add(h, out) : out;
    }
    return ops::concat_cols(std::vector<Var<T>>{h, x});
  }

  Var<T> run_prenet(Graph<T>& g, Var<T> prev) {
    Var<T> h = prev;
    for (auto& layer : prenet) h = ops::relu(layer.forward(g, h));
    return h;
  }

  /// Teacher-forced decoding: the previous frame at step t is Y[t-1] plus
  /// N(0, noise_std^2) noise per step and channel, with Y[-1] = 0.
  Var<T> teacher_forced(Graph<T>& g, Var<T> latents, std::size_t speaker, const BasicTensor<T>& targets,
                        Mode mode, bool training, Rng& rng, double noise_std) {
    check_speaker(speaker);
    const std::size_t frames = latents.value().rows();
    if (targets.rows() != frames || targets.cols() != config.output_dim)
      throw ShapeError("teacher forcing: targets " + shape_str(targets.shape()) +
                       " do not match latents of length " + std::to_string(frames));
    if (noise_std < 0.0) throw ArgumentError("teacher forcing: noise std must be non-negative");
    Var<T> spk = ops::repeat_row(g.param(speakers), speaker, frames);
    Var<T> cond = condition(g, latents, spk, mode, training, rng);
    BasicTensor<T> prev({frames, config.output_dim});
    for (std::size_t t = 1; t < frames; ++t)
      std::copy_n(targets.row(t - 1).begin(), config.output_dim, prev.row(t).begin());
    if (noise_std > 0.0)
      for (auto& v : prev.data()) v += static_cast<T>(noise_std * rng.normal());
    Var<T> pre = run_prenet(g, g.constant(std::move(prev)));
    Var<T> h = gru.forward(g, ops::concat_cols(std::vector<Var<T>>{cond, pre}));
    return output.forward(g, h);
  }

  /// One autoregressive step from a conditioned frame. Returns the output
  /// frame; updates `hidden`.
  BasicTensor<T> ar_step(const BasicTensor<T>& cond_row, const BasicTensor<T>& prev_frame,
                         BasicTensor<T>& hidden) {
    Graph<T> g(false);
    Var<T> c = g.constant(BasicTensor<T>({1, cond_row.size()}, cond_row.storage()));
    Var<T> p = g.constant(BasicTensor<T>({1, config.output_dim}, prev_frame.storage()));
    Var<T> h = gru.forward(g, ops::concat_cols(std::vector<Var<T>>{c, run_prenet(g, p)}), hidden);
    hidden = BasicTensor<T>({config.gru_hidden}, h.value().storage());
    return BasicTensor<T>({config.output_dim}, output.forward(g, h).value().storage());
  }

  /// Generates every frame from its own previous output. No noise.
  BasicTensor<T> free_running(const BasicTensor<T>& latents, std::size_t speaker, Mode mode) {
    check_speaker(speaker);
    Graph<T> g(false);
    Rng unused(0);
    const std::size_t frames = latents.rows();
    Var<T> spk = ops::repeat_row(g.param(speakers), speaker, frames);
    const BasicTensor<T> cond = condition(g, g.constant(latents), spk, mode, false, unused).value();
    BasicTensor<T> out({frames, config.output_dim});
    BasicTensor<T> hidden({config.gru_hidden});
    BasicTensor<T> prev({config.output_dim});
    for (std::size_t t = 0; t < frames; ++t) {
      const BasicTensor<T> row({cond.cols()}, std::vector<T>(cond.row(t).begin(), cond.row(t).end()));
      prev = ar_step(row, prev, hidden);
      std::copy_n(prev.data().begin(), config.output_dim, out.row(t).begin());
    }
    return out;
  }

  DecoderState<T> initial_state(Mode mode) {
    DecoderState<T> s;
    std::size_t in = config.latent_dim + config.speaker_dim;
    for (auto& block : conv) {
      s.conv_context.emplace_back(block.branch(mode).left_context(), in);
      in = config.conv_channels;
    }
    s.hidden = BasicTensor<T>({config.gru_hidden});
    s.prev_frame = BasicTensor<T>({config.output_dim});
    return s;
  }

  /// Conditions a chunk of latents using the history held in `state`.
  /// Exact in streaming mode; in non-streaming mode frames beyond the chunk
  /// are treated as absent (zero padding).
  BasicTensor<T> condition_chunk(DecoderState<T>& state, const BasicTensor<T>& latents,
                                 const BasicTensor<T>& speaker_embedding, Mode mode) {
    if (speaker_embedding.size() != config.speaker_dim)
      throw ShapeError("speaker embedding must have " + std::to_string(config.speaker_dim) + " values");
    if (latents.cols() != config.latent_dim)
      throw ShapeError("decoder expects latent width " + std::to_string(config.latent_dim));
    if (state.conv_context.size() != conv.size()) throw ContractError("decoder state does not match model");
    const std::size_t frames = latents.rows();
    BasicTensor<T> h({frames, config.latent_dim + config.speaker_dim});
    for (std::size_t t = 0; t < frames; ++t) {
      std::copy_n(latents.row(t).begin(), config.latent_dim, h.row(t).begin());
      std::copy_n(speaker_embedding.data().begin(), config.speaker_dim,
                  h.row(t).begin() + static_cast<std::ptrdiff_t>(config.latent_dim));
    }
    if (conv.empty()) return h;
    Rng unused(0);
    Graph<T> g(false);
    Var<T> x = g.constant(h);
    Var<T> cur = x;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      auto& layer = conv[i].branch(mode);
      Var<T> out = g.constant(state.conv_context[i].apply(cur.value(), [&](const BasicTensor<T>& in) {
        Graph<T> inner(false);
        return layer.forward(inner, inner.constant(in), false, unused).value();
      }));
      cur = residual_block(i) ? ops::add(cur, out) : out;
    }
    return ops::concat_cols(std::vector<Var<T>>{cur, x}).value();
  }

  /// Decodes one frame; `prev_frame` is fed to the prenet and stored in the
  /// returned state.
  std::pair<BasicTensor<T>, DecoderState<T>> decode_step(const DecoderState<T>& state,
                                                         const BasicTensor<T>& latent_t,
                                                         const BasicTensor<T>& speaker_embedding,
                                                         const BasicTensor<T>& prev_frame, Mode mode) {
    if (latent_t.size() != config.latent_dim) throw ShapeError("decode_step: latent size mismatch");
    if (prev_frame.size() != config.output_dim) throw ShapeError("decode_step: previous frame size mismatch");
    DecoderState<T> next = state;
    const BasicTensor<T> cond = condition_chunk(
        next, BasicTensor<T>({1, config.latent_dim}, latent_t.storage()), speaker_embedding, mode);
    BasicTensor<T> frame =
        ar_step(BasicTensor<T>({cond.cols()}, cond.storage()), prev_frame, next.hidden);
    next.prev_frame = frame;
    return {std::move(frame), std::move(next)};
  }

  /// Parameters of the autoregressive loop (prenet, GRU, output).
  ParamList<T> autoregressive_parameters() {
    ParamList<T> out;
    for (auto& p : prenet) p.collect(out);
    gru.collect(out);
    output.collect(out);
    return out;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&speakers);
    for (auto& c : conv) c.collect(out);
    for (auto& p : prenet) p.collect(out);
    gru.collect(out);
    output.collect(out);
  }

  DecoderConfig config;
  Parameter<T> speakers;
  std::vector<DualModeConvBlock<T>> conv;
  std::vector<Linear<T>> prenet;
  GruLayer<T> gru;
  Linear<T> output;
};

}  // namespace dualvc
