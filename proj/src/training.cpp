// SPDX-License-Identifier: Apache-2.0
#include "dualvc/training.hpp"

#include <cmath>
#include <numbers>

#include "dualvc/bytes.hpp"
#include "dualvc/config_io.hpp"

namespace dualvc {

double TrainConfig::lr_scale(ParamGroup g) const {
  switch (g) {
    case ParamGroup::Shared: return shared_lr_scale;
    case ParamGroup::Causal: return causal_lr_scale;
    case ParamGroup::NonCausal: return noncausal_lr_scale;
    case ParamGroup::Autoregressive: return autoregressive_lr_scale;
    case ParamGroup::Predictive: return predictive_lr_scale;
  }
  return 1.0;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw ConfigError("final_lr_fraction must be in [0, 1]");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (tempo_min < 0.8 || tempo_max > 1.5 || tempo_min > tempo_max)
    throw ConfigError("tempo range must lie within [0.8, 1.5]");
  for (double s : {shared_lr_scale, causal_lr_scale, noncausal_lr_scale, autoregressive_lr_scale,
                   predictive_lr_scale})
    if (s < 0.0) throw ConfigError("learning-rate scales must be non-negative");
}

double TrainConfig::schedule(std::size_t t) const {
  if (final_lr_fraction == 1.0 || steps == 0) return 1.0;
  const double progress = std::min(1.0, static_cast<double>(t > 0 ? t - 1 : 0) / static_cast<double>(steps));
  return final_lr_fraction + (1.0 - final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Adam::step(const ParamList<float>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const double lr = cfg_.learning_rate * cfg_.schedule(t_) * cfg_.lr_scale(p.group);
    if (lr == 0.0) continue;
    const float step = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(cfg_.adam_eps);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const float gk = p.grad[k];
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      p.value[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

void add_gradient_noise(const ParamList<float>& params, Rng& rng, double stddev) {
  if (stddev < 0.0) throw ArgumentError("gradient noise std must be non-negative");
  if (stddev == 0.0) return;
  for (auto* p : params)
    for (auto& g : p->grad.data()) g += static_cast<float>(stddev * rng.normal());
}

Tensor tempo_augment(const Tensor& features, double multiplier) {
  if (!(multiplier >= 0.8 && multiplier <= 1.5))
    throw ArgumentError("tempo multiplier " + std::to_string(multiplier) + " outside [0.8, 1.5]");
  const std::size_t frames = features.rows(), dims = features.cols();
  const auto out_frames = static_cast<std::size_t>(
      std::max<long>(1, std::lround(static_cast<double>(frames) / multiplier)));
  if (out_frames == frames) return features;
  Tensor out({out_frames, dims});
  for (std::size_t i = 0; i < out_frames; ++i) {
    const double pos = out_frames == 1 ? 0.0
                                       : static_cast<double>(i) * static_cast<double>(frames - 1) /
                                             static_cast<double>(out_frames - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, frames - 1);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t c = 0; c < dims; ++c)
      out(i, c) = frac == 0.0 ? features(lo, c)
                              : static_cast<float>((1.0 - frac) * features(lo, c) + frac * features(hi, c));
  }
  return out;
}

LossBreakdown train_step(Model& model, Adam& optimizer, const std::vector<Example>& batch, Rng& rng,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();

  Graph<float> g;
  std::vector<ExampleLosses<float>> per;
  for (const auto& ex : batch)
    per.push_back(example_losses(g, model, ex.bnf, ex.speaker, ex.target, true, rng,
                                 model.config.decoder.ar_input_noise_std));
  auto batch_mean = [&](Var<float> ExampleLosses<float>::*field) {
    Var<float> s = per[0].*field;
    for (std::size_t i = 1; i < per.size(); ++i) s = ops::add(s, per[i].*field);
    return per.size() == 1 ? s : ops::scale(s, 1.0f / static_cast<float>(per.size()));
  };
  ExampleLosses<float> mean{batch_mean(&ExampleLosses<float>::rec_s),
                            batch_mean(&ExampleLosses<float>::rec_ns),
                            batch_mean(&ExampleLosses<float>::hpc_s),
                            batch_mean(&ExampleLosses<float>::hpc_ns),
                            batch_mean(&ExampleLosses<float>::distill)};
  Var<float> total = combine_losses(mean, cfg.distill_weight, cfg.hpc_weight, cfg.rec_weight);
  g.backward(total);

  add_gradient_noise(model.decoder.autoregressive_parameters(), rng, model.config.decoder.grad_noise_std);
  for (auto* p : params)
    if (!p->grad.all_finite()) throw NonFiniteError("train_step: non-finite gradient in '" + p->name + "'");
  optimizer.step(params);

  LossBreakdown out;
  out.rec_streaming = mean.rec_s.value()[0];
  out.rec_nonstreaming = mean.rec_ns.value()[0];
  out.hpc_streaming = mean.hpc_s.value()[0];
  out.hpc_nonstreaming = mean.hpc_ns.value()[0];
  out.distill = mean.distill.value()[0];
  out.total = total.value()[0];
  return out;
}

Trainer::Trainer(Model& model, const Corpus& corpus, TrainConfig cfg)
    : model_(model), corpus_(corpus), cfg_(std::move(cfg)), optimizer_(cfg_), rng_(cfg_.seed),
      train_ids_(corpus.train_indices()) {
  cfg_.validate();
  if (train_ids_.empty()) throw ConfigError("corpus has no training utterances");
  if (corpus.config.content_dim != model.config.encoder.input_dim ||
      corpus.config.feature_dim != model.config.decoder.output_dim ||
      corpus.config.n_speakers != model.config.decoder.n_speakers)
    throw ConfigError("model dimensions do not match the corpus");
}

Example Trainer::draw_example(bool augment) {
  const auto& u = corpus_.utterances[train_ids_[rng_.index(train_ids_.size())]];
  Example ex;
  ex.speaker = rng_.index(corpus_.config.n_speakers);
  ex.bnf = u.bnf;
  ex.target = u.targets[ex.speaker];
  if (augment) {
    const double mult = cfg_.tempo_min + (cfg_.tempo_max - cfg_.tempo_min) * rng_.uniform();
    ex.bnf = tempo_augment(ex.bnf, mult);
    ex.target = tempo_augment(ex.target, mult);
  }
  if (cfg_.crop_frames > 0 && ex.bnf.rows() > cfg_.crop_frames) {
    const std::size_t start = rng_.index(ex.bnf.rows() - cfg_.crop_frames + 1);
    ex.bnf = ex.bnf.slice_rows(start, start + cfg_.crop_frames);
    ex.target = ex.target.slice_rows(start, start + cfg_.crop_frames);
  }
  return ex;
}

std::vector<Example> Trainer::next_batch() {
  const bool augment = cfg_.tempo_augment && (step_ % 2 == 1);
  std::vector<Example> batch;
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(draw_example(augment));
  return batch;
}

LossBreakdown Trainer::step() {
  const bool augmented = cfg_.tempo_augment && (step_ % 2 == 1);
  LossBreakdown out = train_step(model_, optimizer_, next_batch(), rng_, cfg_);
  out.augmented = augmented;
  ++step_;
  return out;
}

double heldout_conversion_mse(Model& model, const Corpus& corpus, Mode mode) {
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i : corpus.heldout_indices()) {
    const auto& u = corpus.utterances[i];
    for (std::size_t s = 0; s < u.targets.size(); ++s) {
      const Tensor y = model.convert(u.bnf, s, mode);
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double d = static_cast<double>(y[k]) - u.targets[s][k];
        sse += d * d;
      }
      n += y.size();
    }
  }
  return sse / static_cast<double>(n);
}

double heldout_teacher_forced_mse(Model& model, const Corpus& corpus, Mode mode) {
  double total = 0.0;
  std::size_t n = 0;
  Rng unused(0);
  for (std::size_t i : corpus.heldout_indices()) {
    const auto& u = corpus.utterances[i];
    for (std::size_t s = 0; s < u.targets.size(); ++s) {
      Graph<float> g(false);
      auto z = model.encoder.encode(g, g.constant(u.bnf), mode, false, unused);
      Var<float> y = model.decoder.teacher_forced(g, z.latent, s, u.targets[s], mode, false, unused, 0.0);
      total += reconstruction_loss(g.constant(u.targets[s]), y).value()[0];
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.text("DVCM");
  w.u32(kCheckpointVersion);
  nlohmann::json meta = {{"model", to_json(ckpt.config)}, {"step", ckpt.step}};
  const std::string text = meta.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.text(4, "magic") != "DVCM") throw FormatError("checkpoint: bad magic at byte offset 0");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at byte offset 4");
  const std::uint32_t len = r.u32("config length");
  const std::string text = r.text(len, "config");
  Checkpoint ckpt;
  try {
    const auto meta = nlohmann::json::parse(text);
    ckpt.config = model_config_from_json(meta.at("model"));
    ckpt.step = meta.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config blob: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config blob: ") + e.what());
  }
  while (!r.at_end()) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.text(name_len, "tensor name");
    const std::uint32_t ndim = r.u32("tensor rank");
    if (ndim == 0 || ndim > 8) r.fail("tensor '" + name + "' has invalid rank " + std::to_string(ndim));
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const std::uint32_t d = r.u32("tensor dimension");
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
      shape.push_back(d);
    }
    const std::size_t count = shape_numel(shape);
    r.need(count * 4, "tensor payload");
    std::vector<float> data(count);
    for (auto& v : data) v = r.f32("tensor payload");
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

Checkpoint make_checkpoint(Model& model, std::uint64_t step) {
  Checkpoint c;
  c.config = model.config;
  c.step = step;
  for (auto* p : model.inference_parameters()) c.tensors.emplace_back(p->name, p->value);
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.config);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  for (auto* p : model.inference_parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor '" + p->name + "'");
    if (it->second->shape() != p->value.shape())
      throw FormatError("checkpoint: tensor '" + p->name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    p->value = *it->second;
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, std::uint64_t step) {
  write_file_bytes(path, encode_checkpoint(make_checkpoint(model, step)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace dualvc
