// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "dualvc/decoder.hpp"
#include "dualvc/encoder.hpp"
#include "dualvc/hpc.hpp"

namespace dualvc {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  HpcConfig hpc;
  std::uint64_t seed = 1;

  void validate() const {
    encoder.validate();
    decoder.validate();
    hpc.validate();
    if (decoder.latent_dim != encoder.hidden)
      throw ConfigError("decoder latent_dim must equal encoder hidden size");
  }

  /// Deliberately small sizes for finite-difference checks.
  static ModelConfig tiny();
};

/// Encoder, decoder and the training-only predictive-coding heads.
template <typename T>
class DualVcModel {
 public:
  DualVcModel() = default;
  explicit DualVcModel(const ModelConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    encoder = Encoder<T>(cfg.encoder, rng);
    decoder = Decoder<T>(cfg.decoder, rng);
    cpc = CpcHead<T>(cfg.hpc, cfg.encoder.hidden, rng);
    apc = ApcHead<T>(cfg.hpc, cfg.encoder.hidden, rng);
  }

  /// Parameters needed for conversion (excludes the HPC heads).
  ParamList<T> inference_parameters() {
    ParamList<T> out;
    encoder.collect(out);
    decoder.collect(out);
    return out;
  }

  ParamList<T> parameters() {
    ParamList<T> out = inference_parameters();
    cpc.collect(out);
    apc.collect(out);
    return out;
  }

  template <typename U>
  DualVcModel<U> cast() {
    DualVcModel<U> out(config);
    copy_parameter_values(out.parameters(), parameters());
    return out;
  }

  /// Offline conversion: encode the whole input, then generate free-running.
  BasicTensor<T> convert(const BasicTensor<T>& features, std::size_t speaker, Mode mode) {
    decoder.check_speaker(speaker);
    Graph<T> g(false);
    Rng unused(0);
    const BasicTensor<T> z = encoder.encode(g, g.constant(features), mode, false, unused).latent.value();
    return decoder.free_running(z, speaker, mode);
  }

  /// Latents only, inference mode.
  BasicTensor<T> encode(const BasicTensor<T>& features, Mode mode) {
    Graph<T> g(false);
    Rng unused(0);
    return encoder.encode(g, g.constant(features), mode, false, unused).latent.value();
  }

  ModelConfig config;
  Encoder<T> encoder;
  Decoder<T> decoder;
  CpcHead<T> cpc;
  ApcHead<T> apc;
};

using Model = DualVcModel<float>;

}  // namespace dualvc
