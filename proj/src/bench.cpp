// SPDX-License-Identifier: Apache-2.0
#include "dualvc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#ifdef __linux__
#include <sched.h>
#endif

#include "dualvc/streaming.hpp"

namespace dualvc {

LatencyPrediction predict_latency(double chunk_ms, double rtf) {
  if (!(chunk_ms > 0.0)) throw ArgumentError("chunk size must be positive");
  if (!(rtf >= 0.0)) throw ArgumentError("rtf must be non-negative");
  return {chunk_ms * rtf, chunk_ms * (1.0 + rtf)};
}

RtfStats measure_rtf(const std::function<void()>& workload, std::size_t frames, double hop_ms,
                     std::size_t repetitions) {
  if (repetitions < 3) throw ArgumentError("measure_rtf needs at least 3 repetitions");
  if (frames == 0 || !(hop_ms > 0.0)) throw ArgumentError("measure_rtf: empty input duration");
  workload();  // warm-up
  std::vector<double> secs;
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    workload();
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(secs.begin(), secs.end());
  const double duration = static_cast<double>(frames) * hop_ms / 1000.0;
  const std::size_t n = secs.size();
  const double median = n % 2 ? secs[n / 2] : 0.5 * (secs[n / 2 - 1] + secs[n / 2]);
  return {secs.front() / duration, median / duration, secs.back() / duration};
}

RtfStats measure_model_rtf(Model& model, Mode mode, std::size_t frames, double hop_ms,
                           std::size_t repetitions, std::size_t chunk_frames) {
  Rng rng(1234);
  const Tensor input = seeded_normal(rng, {frames, model.config.encoder.input_dim}, 0.0, 1.0);
  if (chunk_frames == 0)
    return measure_rtf([&] { (void)model.convert(input, 0, mode); }, frames, hop_ms, repetitions);
  if (mode != Mode::Streaming) throw ModeError("chunked measurement requires streaming mode");
  return measure_rtf([&] { (void)stream_convert(model, input, 0, chunk_frames); }, frames, hop_ms, repetitions);
}

std::uint64_t conv_flops(std::size_t frames, std::size_t cin, std::size_t cout, std::size_t k) {
  return 2ull * frames * cin * cout * k;
}

std::uint64_t depthwise_flops(std::size_t frames, std::size_t channels, std::size_t k) {
  return 2ull * frames * channels * k;
}

std::uint64_t linear_flops(std::size_t frames, std::size_t in, std::size_t out) {
  return 2ull * frames * in * out;
}

std::uint64_t gru_flops(std::size_t frames, std::size_t input, std::size_t hidden) {
  return 2ull * 3 * frames * hidden * (hidden + input) + 14ull * frames * hidden;
}

namespace {

std::uint64_t basic_layer_flops(std::size_t frames, std::size_t cin, std::size_t cout, std::size_t k) {
  return conv_flops(frames, cin, cout, 1) + depthwise_flops(frames, cout, k) + conv_flops(frames, cout, cout, 1);
}

}  // namespace

std::uint64_t count_flops(const ModelConfig& cfg, Mode mode, std::size_t frames) {
  cfg.validate();
  const auto& e = cfg.encoder;
  const auto& d = cfg.decoder;
  std::uint64_t n = 0;
  for (std::size_t k : e.bank_kernel_sizes) n += basic_layer_flops(frames, e.input_dim, e.bank_channels, k);
  const std::size_t bank_width = e.bank_channels * e.bank_kernel_sizes.size();
  n += basic_layer_flops(frames, bank_width, e.projection_channels, e.depthwise_kernel);
  n += basic_layer_flops(frames, e.projection_channels, e.input_dim, e.depthwise_kernel);
  n += linear_flops(frames, e.input_dim, e.hidden);
  n += e.highway_layers * 2 * linear_flops(frames, e.hidden, e.hidden);
  n += gru_flops(frames, e.hidden, e.hidden);
  if (mode == Mode::NonStreaming && e.bidirectional_noncausal_gru) n += gru_flops(frames, e.hidden, e.hidden);

  std::size_t in = d.latent_dim + d.speaker_dim;
  for (std::size_t i = 0; i < d.conv_blocks; ++i) {
    n += basic_layer_flops(frames, in, d.conv_channels, d.depthwise_kernel);
    in = d.conv_channels;
  }
  std::size_t p_in = d.output_dim;
  for (std::size_t p : d.prenet) {
    n += linear_flops(frames, p_in, p);
    p_in = p;
  }
  const std::size_t cond = (d.conv_blocks ? d.conv_channels : 0) + d.latent_dim + d.speaker_dim;
  n += gru_flops(frames, cond + p_in, d.gru_hidden);
  n += linear_flops(frames, d.gru_hidden, d.output_dim);
  return n;
}

std::string LatencyReport::to_text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "chunk_ms=%.1f\nchunk_frames=%zu\nrtf=%.4f\ninference_latency_ms=%.1f\n"
                "total_latency_ms=%.1f\nflops_per_second=%llu\n",
                chunk_ms, chunk_frames, rtf, inference_latency_ms, total_latency_ms,
                static_cast<unsigned long long>(flops_per_second));
  return buf;
}

LatencyReport make_latency_report(double chunk_ms, double hop_ms, double rtf, std::uint64_t flops_per_second) {
  const LatencyPrediction p = predict_latency(chunk_ms, rtf);
  LatencyReport r;
  r.chunk_ms = chunk_ms;
  r.chunk_frames = chunk_frames_from_ms(chunk_ms, hop_ms);
  r.rtf = rtf;
  r.inference_latency_ms = p.inference_ms;
  r.total_latency_ms = p.total_ms;
  r.flops_per_second = flops_per_second;
  return r;
}

std::size_t chunk_frames_from_ms(double chunk_ms, double hop_ms) {
  if (!(chunk_ms > 0.0) || !(hop_ms > 0.0)) throw ArgumentError("chunk and hop durations must be positive");
  return static_cast<std::size_t>(std::max(1L, std::lround(chunk_ms / hop_ms)));
}

bool pin_to_single_core() {
#ifdef __linux__
  cpu_set_t current;
  CPU_ZERO(&current);
  if (sched_getaffinity(0, sizeof(current), &current) != 0) return false;
  for (int cpu = 0; cpu < CPU_SETSIZE; ++cpu)
    if (CPU_ISSET(cpu, &current)) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(cpu, &one);
      return sched_setaffinity(0, sizeof(one), &one) == 0;
    }
#endif
  return false;
}

}  // namespace dualvc
