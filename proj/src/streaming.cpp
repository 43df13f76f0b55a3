// SPDX-License-Identifier: Apache-2.0
#include "dualvc/streaming.hpp"

#include <chrono>

namespace dualvc {

namespace {

template <typename Layer>
auto causal_layer(Layer& layer) {
  return [&layer](const Tensor& x) {
    Graph<float> g(false);
    Rng unused(0);
    return layer.forward(g, g.constant(x), false, unused).value();
  };
}

}  // namespace

std::size_t StreamState::byte_size() const {
  std::size_t n = speaker_embedding.size() * sizeof(float) + encoder_hidden.size() * sizeof(float);
  for (const auto& r : bank_context) n += r.byte_size();
  n += pool_context.byte_size() + projection1_context.byte_size() + projection2_context.byte_size();
  for (const auto& r : decoder.conv_context) n += r.byte_size();
  n += (decoder.hidden.size() + decoder.prev_frame.size()) * sizeof(float);
  return n;
}

StreamState open_stream(Model& model, std::size_t speaker) {
  auto& enc = model.encoder;
  StreamState s;
  s.speaker = speaker;
  s.speaker_embedding = model.decoder.speaker_embedding(speaker);
  for (auto& block : enc.bank)
    s.bank_context.emplace_back(block.causal_branch.left_context(), enc.config.input_dim);
  s.pool_context = ContextRing<float>(1, enc.bank_width());
  s.projection1_context =
      ContextRing<float>(enc.projection1.causal_branch.left_context(), enc.bank_width());
  s.projection2_context = ContextRing<float>(enc.projection2.causal_branch.left_context(),
                                             enc.config.projection_channels);
  s.encoder_hidden = Tensor({enc.config.hidden});
  s.decoder = model.decoder.initial_state(Mode::Streaming);
  return s;
}

ChunkResult push_chunk(Model& model, StreamState& state, const Tensor& chunk) {
  const auto start = std::chrono::steady_clock::now();
  auto& enc = model.encoder;
  if (chunk.empty() || chunk.rows() == 0) throw ArgumentError("push_chunk: chunk must hold at least one frame");
  if (chunk.rank() != 2 || chunk.cols() != enc.config.input_dim)
    throw ShapeError("push_chunk: expected [c x " + std::to_string(enc.config.input_dim) + "] chunk, got " +
                     shape_str(chunk.shape()));
  if (state.bank_context.size() != enc.bank.size()) throw ContractError("stream state does not match model");

  // Convolution stage, each layer fed with its own held history.
  std::vector<Tensor> bank_out;
  for (std::size_t i = 0; i < enc.bank.size(); ++i)
    bank_out.push_back(state.bank_context[i].apply(chunk, causal_layer(enc.bank[i].causal_branch)));
  Tensor h;
  {
    Graph<float> g(false);
    std::vector<Var<float>> parts;
    for (auto& b : bank_out) parts.push_back(g.constant(std::move(b)));
    h = ops::concat_cols(parts).value();
  }
  h = state.pool_context.apply(h, [](const Tensor& x) {
    Graph<float> g(false);
    return ops::max_pool2(g.constant(x), true).value();
  });
  h = state.projection1_context.apply(h, causal_layer(enc.projection1.causal_branch));
  h = state.projection2_context.apply(h, causal_layer(enc.projection2.causal_branch));

  Tensor latents;
  {
    Graph<float> g(false);
    Var<float> x = ops::add(g.constant(h), g.constant(chunk));
    Var<float> z = enc.gru.forward(g, enc.highway_stage(g, x), state.encoder_hidden);
    latents = z.value();
  }
  state.encoder_hidden = Tensor({enc.config.hidden}, std::vector<float>(latents.row(latents.rows() - 1).begin(),
                                                                        latents.row(latents.rows() - 1).end()));

  auto& dec = model.decoder;
  const Tensor cond = dec.condition_chunk(state.decoder, latents, state.speaker_embedding, Mode::Streaming);
  ChunkResult result;
  result.frames = Tensor({chunk.rows(), dec.config.output_dim});
  for (std::size_t t = 0; t < chunk.rows(); ++t) {
    const Tensor row({cond.cols()}, std::vector<float>(cond.row(t).begin(), cond.row(t).end()));
    state.decoder.prev_frame = dec.ar_step(row, state.decoder.prev_frame, state.decoder.hidden);
    std::copy_n(state.decoder.prev_frame.data().begin(), dec.config.output_dim, result.frames.row(t).begin());
  }
  state.frames_processed += chunk.rows();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Tensor stream_convert(Model& model, const Tensor& input, std::size_t speaker, std::size_t chunk_frames,
                      std::vector<double>* chunk_seconds) {
  if (chunk_frames == 0) throw ArgumentError("chunk size must be at least one frame");
  StreamState state = open_stream(model, speaker);
  std::vector<Tensor> outs;
  for (std::size_t begin = 0; begin < input.rows(); begin += chunk_frames) {
    const std::size_t end = std::min(begin + chunk_frames, input.rows());
    ChunkResult r = push_chunk(model, state, input.slice_rows(begin, end));
    if (chunk_seconds) chunk_seconds->push_back(r.seconds);
    outs.push_back(std::move(r.frames));
  }
  return concat_rows(outs);
}

std::vector<double> verify_stream_equivalence(Model& model, const Tensor& input,
                                              const std::vector<std::size_t>& chunk_sizes, Mode mode,
                                              std::size_t speaker) {
  if (mode != Mode::Streaming)
    throw ModeError("stream equivalence requires streaming mode: non-causal branches cannot run chunk-wise");
  const Tensor offline = model.convert(input, speaker, Mode::Streaming);
  std::vector<double> out;
  for (std::size_t c : chunk_sizes) out.push_back(max_abs_diff(stream_convert(model, input, speaker, c), offline));
  return out;
}

}  // namespace dualvc
