// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualvc/model.hpp"
#include "dualvc/synthdata.hpp"

namespace dualvc {

struct TrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 1;
  /// Random training window length in frames; 0 trains on whole utterances.
  std::size_t crop_frames = 64;
  double learning_rate = 1e-3;
  /// Cosine decay of the learning rate to this fraction of its initial
  /// value at `steps`; 1 keeps it constant.
  double final_lr_fraction = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  double distill_weight = 1.0;
  double hpc_weight = 1.0;
  double rec_weight = 1.0;
  bool tempo_augment = true;
  double tempo_min = 0.8;
  double tempo_max = 1.5;
  /// Learning-rate multiplier per parameter group.
  double shared_lr_scale = 1.0;
  double causal_lr_scale = 1.0;
  double noncausal_lr_scale = 1.0;
  double autoregressive_lr_scale = 1.0;
  double predictive_lr_scale = 1.0;

  double lr_scale(ParamGroup g) const;
  /// Learning-rate multiplier of the schedule at 1-based step `t`.
  double schedule(std::size_t t) const;
  void validate() const;
};

/// One (input, speaker, target) training pair.
struct Example {
  Tensor bnf;
  std::size_t speaker = 0;
  Tensor target;
};

struct LossBreakdown {
  float rec_streaming = 0;
  float rec_nonstreaming = 0;
  float hpc_streaming = 0;
  float hpc_nonstreaming = 0;
  float distill = 0;
  float total = 0;
  bool augmented = false;
};

/// Mean squared error over all elements.
template <typename T>
Var<T> reconstruction_loss(Var<T> target, Var<T> predicted) {
  return ops::mse(target, predicted);
}

/// Loss terms of one example in one graph, before any optimizer work.
template <typename T>
struct ExampleLosses {
  Var<T> rec_s, rec_ns, hpc_s, hpc_ns, distill;
};

/// Forwards the example in both modes and builds every loss term.
template <typename T>
ExampleLosses<T> example_losses(Graph<T>& g, DualVcModel<T>& model, const BasicTensor<T>& bnf,
                                std::size_t speaker, const BasicTensor<T>& target, bool training,
                                Rng& rng, double ar_noise_std) {
  const auto& hpc = model.config.hpc;
  Var<T> x = g.constant(bnf);
  Var<T> y = g.constant(target);
  EncoderOutput<T> z_ns = model.encoder.encode(g, x, Mode::NonStreaming, training, rng);
  Var<T> y_ns = model.decoder.teacher_forced(g, z_ns.latent, speaker, target, Mode::NonStreaming,
                                             training, rng, ar_noise_std);
  HpcLoss<T> h_ns = hpc_loss(g, model.cpc, model.apc, z_ns.latent, hpc, rng);
  EncoderOutput<T> z_s = model.encoder.encode(g, x, Mode::Streaming, training, rng);
  Var<T> y_s = model.decoder.teacher_forced(g, z_s.latent, speaker, target, Mode::Streaming,
                                            training, rng, ar_noise_std);
  HpcLoss<T> h_s = hpc_loss(g, model.cpc, model.apc, z_s.latent, hpc, rng);
  return {reconstruction_loss(y, y_s), reconstruction_loss(y, y_ns), h_s.total, h_ns.total,
          distillation_loss(z_s, z_ns)};
}

/// L = w_d L_distill + w_h (L_HPC_s + L_HPC_ns) + w_r (L_rec_s + L_rec_ns);
/// a weight of exactly 1 adds the term unscaled.
template <typename T>
Var<T> combine_losses(const ExampleLosses<T>& l, double wd, double wh, double wr) {
  auto weighted = [](Var<T> v, double w) { return w == 1.0 ? v : ops::scale(v, static_cast<T>(w)); };
  return ops::add(ops::add(weighted(l.distill, wd), weighted(ops::add(l.hpc_s, l.hpc_ns), wh)),
                  weighted(ops::add(l.rec_s, l.rec_ns), wr));
}

/// Adam with a per-group learning-rate multiplier.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(const ParamList<float>& params);
  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Adds independent N(0, std^2) noise to each gradient entry.
void add_gradient_noise(const ParamList<float>& params, Rng& rng, double stddev);

/// Resamples along time by linear interpolation to round(T / multiplier)
/// frames; first and last frames stay aligned.
Tensor tempo_augment(const Tensor& features, double multiplier);

/// One joint update: both modes forward, L backward, gradient noise on the
/// autoregressive parameters, Adam step.
LossBreakdown train_step(Model& model, Adam& optimizer, const std::vector<Example>& batch, Rng& rng,
                         const TrainConfig& cfg);

/// Batching, augmentation alternation and the update loop.
class Trainer {
 public:
  Trainer(Model& model, const Corpus& corpus, TrainConfig cfg);

  /// Original data on even steps, tempo-augmented data on odd steps.
  std::vector<Example> next_batch();
  LossBreakdown step();
  std::size_t step_count() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Example draw_example(bool augment);

  Model& model_;
  const Corpus& corpus_;
  TrainConfig cfg_;
  Adam optimizer_;
  Rng rng_;
  std::vector<std::size_t> train_ids_;
  std::size_t step_ = 0;
};

/// Mean reconstruction MSE of free-running conversion over the held-out
/// utterances, every target speaker.
double heldout_conversion_mse(Model& model, const Corpus& corpus, Mode mode);

/// Teacher-forced non-streaming reconstruction loss on held-out data
/// (inference mode, no noise).
double heldout_teacher_forced_mse(Model& model, const Corpus& corpus, Mode mode);

// ---------------------------------------------------------------------------
// Checkpoints: "DVCM", u32 version, u32 length + UTF-8 JSON config, then
// tensors until end of file: u32 name length, name bytes, u32 ndim,
// u32 dims[ndim], little-endian f32 payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

Checkpoint make_checkpoint(Model& model, std::uint64_t step);
/// Builds a model; every inference parameter must be present in the file.
Model model_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::filesystem::path& path, Model& model, std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dualvc
