// SPDX-License-Identifier: Apache-2.0
#include "dualvc/config_io.hpp"

#include <set>
#include <string>

#include "dualvc/bytes.hpp"

namespace dualvc {

using nlohmann::json;

namespace {

/// Reads known keys of one JSON object and rejects the rest.
class FieldReader {
 public:
  FieldReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename V>
  FieldReader& read(const char* key, V& out) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->template get<V>();
      } catch (const json::exception& e) {
        throw ConfigError("config '" + section_ + "." + key + "': " + e.what());
      }
    }
    return *this;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown config key '" + section_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  const auto& e = c.encoder;
  const auto& d = c.decoder;
  const auto& h = c.hpc;
  return {{"seed", c.seed},
          {"encoder",
           {{"input_dim", e.input_dim},
            {"bank_kernel_sizes", e.bank_kernel_sizes},
            {"bank_channels", e.bank_channels},
            {"projection_channels", e.projection_channels},
            {"highway_layers", e.highway_layers},
            {"hidden", e.hidden},
            {"depthwise_kernel", e.depthwise_kernel},
            {"dropout", e.dropout},
            {"bidirectional_noncausal_gru", e.bidirectional_noncausal_gru}}},
          {"decoder",
           {{"latent_dim", d.latent_dim},
            {"n_speakers", d.n_speakers},
            {"speaker_dim", d.speaker_dim},
            {"conv_blocks", d.conv_blocks},
            {"conv_channels", d.conv_channels},
            {"depthwise_kernel", d.depthwise_kernel},
            {"prenet", d.prenet},
            {"gru_hidden", d.gru_hidden},
            {"output_dim", d.output_dim},
            {"dropout", d.dropout},
            {"ar_input_noise_std", d.ar_input_noise_std},
            {"grad_noise_std", d.grad_noise_std}}},
          {"hpc",
           {{"steps", h.steps},
            {"negatives", h.negatives},
            {"gnet_hidden", h.gnet_hidden},
            {"negative_strategy", "within_utterance"},
            {"apc_detach_targets", h.apc_detach_targets},
            {"cpc_detach_candidates", h.cpc_detach_candidates},
            {"use_cpc", h.use_cpc},
            {"use_apc", h.use_apc}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  FieldReader r(j, "model");
  r.read("seed", c.seed);
  if (const json* je = r.child("encoder")) {
    auto& e = c.encoder;
    FieldReader er(*je, "model.encoder");
    er.read("input_dim", e.input_dim)
        .read("bank_kernel_sizes", e.bank_kernel_sizes)
        .read("bank_channels", e.bank_channels)
        .read("projection_channels", e.projection_channels)
        .read("highway_layers", e.highway_layers)
        .read("hidden", e.hidden)
        .read("depthwise_kernel", e.depthwise_kernel)
        .read("dropout", e.dropout)
        .read("bidirectional_noncausal_gru", e.bidirectional_noncausal_gru);
    er.finish();
  }
  if (const json* jd = r.child("decoder")) {
    auto& d = c.decoder;
    FieldReader dr(*jd, "model.decoder");
    dr.read("latent_dim", d.latent_dim)
        .read("n_speakers", d.n_speakers)
        .read("speaker_dim", d.speaker_dim)
        .read("conv_blocks", d.conv_blocks)
        .read("conv_channels", d.conv_channels)
        .read("depthwise_kernel", d.depthwise_kernel)
        .read("prenet", d.prenet)
        .read("gru_hidden", d.gru_hidden)
        .read("output_dim", d.output_dim)
        .read("dropout", d.dropout)
        .read("ar_input_noise_std", d.ar_input_noise_std)
        .read("grad_noise_std", d.grad_noise_std);
    dr.finish();
  }
  if (const json* jh = r.child("hpc")) {
    auto& h = c.hpc;
    FieldReader hr(*jh, "model.hpc");
    std::string strategy = "within_utterance";
    hr.read("steps", h.steps)
        .read("negatives", h.negatives)
        .read("gnet_hidden", h.gnet_hidden)
        .read("negative_strategy", strategy)
        .read("apc_detach_targets", h.apc_detach_targets)
        .read("cpc_detach_candidates", h.cpc_detach_candidates)
        .read("use_cpc", h.use_cpc)
        .read("use_apc", h.use_apc);
    hr.finish();
    if (strategy != "within_utterance") throw ConfigError("unknown negative_strategy '" + strategy + "'");
  }
  r.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"crop_frames", c.crop_frames},
          {"learning_rate", c.learning_rate},
          {"final_lr_fraction", c.final_lr_fraction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"distill_weight", c.distill_weight},
          {"hpc_weight", c.hpc_weight},
          {"rec_weight", c.rec_weight},
          {"tempo_augment", c.tempo_augment},
          {"tempo_min", c.tempo_min},
          {"tempo_max", c.tempo_max},
          {"shared_lr_scale", c.shared_lr_scale},
          {"causal_lr_scale", c.causal_lr_scale},
          {"noncausal_lr_scale", c.noncausal_lr_scale},
          {"autoregressive_lr_scale", c.autoregressive_lr_scale},
          {"predictive_lr_scale", c.predictive_lr_scale}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  FieldReader r(j, "train");
  r.read("steps", c.steps)
      .read("batch_size", c.batch_size)
      .read("crop_frames", c.crop_frames)
      .read("learning_rate", c.learning_rate)
      .read("final_lr_fraction", c.final_lr_fraction)
      .read("beta1", c.beta1)
      .read("beta2", c.beta2)
      .read("adam_eps", c.adam_eps)
      .read("seed", c.seed)
      .read("distill_weight", c.distill_weight)
      .read("hpc_weight", c.hpc_weight)
      .read("rec_weight", c.rec_weight)
      .read("tempo_augment", c.tempo_augment)
      .read("tempo_min", c.tempo_min)
      .read("tempo_max", c.tempo_max)
      .read("shared_lr_scale", c.shared_lr_scale)
      .read("causal_lr_scale", c.causal_lr_scale)
      .read("noncausal_lr_scale", c.noncausal_lr_scale)
      .read("autoregressive_lr_scale", c.autoregressive_lr_scale)
      .read("predictive_lr_scale", c.predictive_lr_scale);
  r.finish();
  c.validate();
  return c;
}

json to_json(const SynthCorpusConfig& c) {
  return {{"n_speakers", c.n_speakers},
          {"content_dim", c.content_dim},
          {"feature_dim", c.feature_dim},
          {"utterances_per_speaker", c.utterances_per_speaker},
          {"frames", c.frames},
          {"hop_ms", c.hop_ms},
          {"seed", c.seed},
          {"bnf_noise_std", c.bnf_noise_std},
          {"segment_min", c.segment_min},
          {"segment_max", c.segment_max},
          {"smoothing", c.smoothing},
          {"heldout_every", c.heldout_every},
          {"normalize", c.normalize}};
}

SynthCorpusConfig corpus_config_from_json(const json& j) {
  SynthCorpusConfig c;
  FieldReader r(j, "corpus");
  r.read("n_speakers", c.n_speakers)
      .read("content_dim", c.content_dim)
      .read("feature_dim", c.feature_dim)
      .read("utterances_per_speaker", c.utterances_per_speaker)
      .read("frames", c.frames)
      .read("hop_ms", c.hop_ms)
      .read("seed", c.seed)
      .read("bnf_noise_std", c.bnf_noise_std)
      .read("segment_min", c.segment_min)
      .read("segment_max", c.segment_max)
      .read("smoothing", c.smoothing)
      .read("heldout_every", c.heldout_every)
      .read("normalize", c.normalize);
  r.finish();
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  FieldReader r(j, "");
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m);
  if (const json* t = r.child("train")) c.train = train_config_from_json(*t);
  if (const json* s = r.child("corpus")) c.corpus = corpus_config_from_json(*s);
  r.finish();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"corpus", to_json(c.corpus)}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace dualvc
