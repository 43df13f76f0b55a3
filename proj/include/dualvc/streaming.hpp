// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dualvc/context.hpp"
#include "dualvc/model.hpp"

namespace dualvc {

/// Everything a stream carries between chunks. Its size does not depend on
/// how many frames have been processed.
struct StreamState {
  std::size_t speaker = 0;
  Tensor speaker_embedding;
  std::vector<ContextRing<float>> bank_context;  // one per bank kernel
  ContextRing<float> pool_context;
  ContextRing<float> projection1_context;
  ContextRing<float> projection2_context;
  Tensor encoder_hidden;
  DecoderState<float> decoder;
  std::size_t frames_processed = 0;

  /// Bytes held by buffers and recurrent state (capacity, not fill level).
  std::size_t byte_size() const;
};

struct ChunkResult {
  Tensor frames;         // one converted frame per input frame
  double seconds = 0.0;  // wall-clock processing time
};

/// Fresh zero state for converting into `speaker`'s voice.
StreamState open_stream(Model& model, std::size_t speaker);

/// Converts the next chunk of input frames in streaming mode.
ChunkResult push_chunk(Model& model, StreamState& state, const Tensor& chunk);

/// Chunked conversion of a whole input with fixed chunk size (the last chunk
/// may be shorter).
Tensor stream_convert(Model& model, const Tensor& input, std::size_t speaker, std::size_t chunk_frames,
                      std::vector<double>* chunk_seconds = nullptr);

/// Max-abs deviation between chunked and offline streaming-mode conversion
/// for each chunk size. Non-streaming models cannot be streamed.
std::vector<double> verify_stream_equivalence(Model& model, const Tensor& input,
                                              const std::vector<std::size_t>& chunk_sizes,
                                              Mode mode = Mode::Streaming, std::size_t speaker = 0);

}  // namespace dualvc
