// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dualvc/model.hpp"

namespace dualvc {

struct LatencyPrediction {
  double inference_ms = 0.0;  // chunk * rtf
  double total_ms = 0.0;      // chunk * (1 + rtf)
};

/// Latency of a chunked real-time system: the chunk must be collected, then
/// processed in chunk * rtf.
LatencyPrediction predict_latency(double chunk_ms, double rtf);

struct RtfStats {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

/// Times `workload` (one warm-up run, then `repetitions` timed runs) and
/// divides by the audio duration frames * hop_ms.
RtfStats measure_rtf(const std::function<void()>& workload, std::size_t frames, double hop_ms,
                     std::size_t repetitions);

/// RTF of converting `frames` random frames, either as one offline pass
/// (chunk_frames == 0) or chunk by chunk through the streaming engine.
RtfStats measure_model_rtf(Model& model, Mode mode, std::size_t frames, double hop_ms,
                           std::size_t repetitions, std::size_t chunk_frames = 0);

// Analytic FLOP counts; one multiply-accumulate counts as 2 FLOPs.
std::uint64_t conv_flops(std::size_t frames, std::size_t cin, std::size_t cout, std::size_t k);
std::uint64_t depthwise_flops(std::size_t frames, std::size_t channels, std::size_t k);
std::uint64_t linear_flops(std::size_t frames, std::size_t in, std::size_t out);
/// 2*3*T*H*(H+I) for the gate products plus 14*T*H for bias adds and gate
/// arithmetic (6H bias, 2H gate sums, 2H reset product, 4H interpolation).
std::uint64_t gru_flops(std::size_t frames, std::size_t input, std::size_t hidden);

/// Inference FLOPs of encoder + decoder for `frames` frames, counting only
/// the branch the mode selects. Normalization, activations and pooling are
/// not counted.
std::uint64_t count_flops(const ModelConfig& cfg, Mode mode, std::size_t frames);

struct LatencyReport {
  double chunk_ms = 0.0;
  std::size_t chunk_frames = 0;
  double rtf = 0.0;
  double inference_latency_ms = 0.0;
  double total_latency_ms = 0.0;
  std::uint64_t flops_per_second = 0;

  /// key=value lines.
  std::string to_text() const;
};

LatencyReport make_latency_report(double chunk_ms, double hop_ms, double rtf, std::uint64_t flops_per_second);

/// Chunk length in frames, rounded to nearest (160 ms at 12.5 ms -> 13).
std::size_t chunk_frames_from_ms(double chunk_ms, double hop_ms);

/// Restricts the calling thread to one CPU when the platform allows it.
bool pin_to_single_core();

}  // namespace dualvc
