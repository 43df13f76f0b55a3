// SPDX-License-Identifier: Apache-2.0
#include "dualvc/synthdata.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "dualvc/bytes.hpp"
#include "json.hpp"

namespace dualvc {

namespace {

Tensor make_content(const SynthCorpusConfig& cfg, Rng& rng, std::size_t frames) {
  Tensor raw({frames, cfg.content_dim});
  std::size_t t = 0;
  while (t < frames) {
    const std::size_t len = cfg.segment_min + rng.index(cfg.segment_max - cfg.segment_min + 1);
    std::vector<float> value(cfg.content_dim);
    for (auto& v : value) v = static_cast<float>(rng.normal());
    for (std::size_t i = 0; i < len && t < frames; ++i, ++t)
      std::copy(value.begin(), value.end(), raw.row(t).begin());
  }
  Tensor out({frames, cfg.content_dim});
  const float a = static_cast<float>(cfg.smoothing);
  for (std::size_t c = 0; c < cfg.content_dim; ++c) {
    float y = raw(0, c);
    for (std::size_t i = 0; i < frames; ++i) {
      y = a * y + (1.0f - a) * raw(i, c);
      out(i, c) = y;
    }
  }
  return out;
}

Tensor render_speaker(const Tensor& content, const Tensor& map, const Tensor& offset) {
  const std::size_t frames = content.rows(), dc = content.cols(), dout = map.dim(0);
  Tensor out({frames, dout});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t o = 0; o < dout; ++o) {
      float s = offset[o];
      for (std::size_t c = 0; c < dc; ++c) s += map(o, c) * content(t, c);
      out(t, o) = s;
    }
  return out;
}

Utterance render_utterance(const Corpus& corpus, Rng& rng, std::size_t frames) {
  const auto& cfg = corpus.config;
  Utterance u;
  u.content = make_content(cfg, rng, frames);
  u.bnf = u.content;
  for (auto& v : u.bnf.data()) v += static_cast<float>(cfg.bnf_noise_std * rng.normal());
  for (std::size_t s = 0; s < cfg.n_speakers; ++s)
    u.targets.push_back(render_speaker(u.content, corpus.speaker_maps[s], corpus.speaker_offsets[s]));
  return u;
}

ChannelStats compute_stats(const std::vector<const Tensor*>& parts) {
  const std::size_t d = parts.front()->cols();
  ChannelStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  double n = 0;
  for (const Tensor* p : parts) {
    for (std::size_t t = 0; t < p->rows(); ++t)
      for (std::size_t c = 0; c < d; ++c) st.mean[c] += (*p)(t, c);
    n += static_cast<double>(p->rows());
  }
  for (auto& m : st.mean) m /= n;
  for (const Tensor* p : parts)
    for (std::size_t t = 0; t < p->rows(); ++t)
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = (*p)(t, c) - st.mean[c];
        st.std[c] += dv * dv;
      }
  for (auto& s : st.std) s = std::sqrt(s / n);
  return st;
}

void apply_stats(Tensor& x, const ChannelStats& st) {
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t c = 0; c < x.cols(); ++c)
      x(t, c) = static_cast<float>((x(t, c) - st.mean[c]) / st.std[c]);
}

ChannelStats identity_stats(std::size_t d) {
  return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
}

void normalize_utterance(Utterance& u, const Corpus& corpus) {
  apply_stats(u.bnf, corpus.bnf_stats);
  for (auto& y : u.targets) apply_stats(y, corpus.target_stats);
}

}  // namespace

void SynthCorpusConfig::validate() const {
  if (n_speakers < 2) throw ConfigError("synthetic corpus needs at least two speakers");
  if (content_dim == 0 || feature_dim == 0 || frames == 0 || utterances_per_speaker == 0)
    throw ConfigError("synthetic corpus sizes must be positive");
  if (segment_min == 0 || segment_max < segment_min) throw ConfigError("bad segment length range");
  if (!(hop_ms > 0.0)) throw ConfigError("hop_ms must be positive");
  if (bnf_noise_std < 0.0) throw ConfigError("bnf_noise_std must be non-negative");
  if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("smoothing must be in [0, 1)");
  if (heldout_every < 2) throw ConfigError("heldout_every must be >= 2");
}

std::vector<std::size_t> Corpus::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (!utterances[i].heldout) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::heldout_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].heldout) out.push_back(i);
  return out;
}

Corpus generate_corpus(const SynthCorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  Rng rng(cfg.seed);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.content_dim));
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
    corpus.speaker_maps.push_back(seeded_normal(rng, {cfg.feature_dim, cfg.content_dim}, 0.0, map_scale));
    corpus.speaker_offsets.push_back(seeded_normal(rng, {cfg.feature_dim}, 0.0, 1.0));
  }
  for (std::size_t s = 0; s < cfg.n_speakers; ++s)
    for (std::size_t i = 0; i < cfg.utterances_per_speaker; ++i) {
      Utterance u = render_utterance(corpus, rng, cfg.frames);
      u.source_speaker = s;
      u.heldout = (i % cfg.heldout_every) == cfg.heldout_every - 1;
      corpus.utterances.push_back(std::move(u));
    }
  if (cfg.normalize) {
    std::vector<const Tensor*> bnf, tgt;
    for (const auto& u : corpus.utterances) {
      bnf.push_back(&u.bnf);
      for (const auto& y : u.targets) tgt.push_back(&y);
    }
    corpus.bnf_stats = compute_stats(bnf);
    corpus.target_stats = compute_stats(tgt);
    for (auto& u : corpus.utterances) normalize_utterance(u, corpus);
  } else {
    corpus.bnf_stats = identity_stats(cfg.content_dim);
    corpus.target_stats = identity_stats(cfg.feature_dim);
  }
  return corpus;
}

Utterance generate_utterance(const Corpus& corpus, std::size_t frames, std::uint64_t seed) {
  if (corpus.speaker_maps.empty()) throw ContractError("corpus has no speaker maps");
  Rng rng(seed);
  Utterance u = render_utterance(corpus, rng, frames);
  normalize_utterance(u, corpus);
  return u;
}

double linear_oracle(const Corpus& corpus, std::size_t target_speaker) {
  if (target_speaker >= corpus.config.n_speakers) throw ArgumentError("linear_oracle: unknown speaker");
  const std::size_t dc = corpus.config.content_dim, dout = corpus.config.feature_dim;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(dc + 1, dc + 1);
  Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(dc + 1, dout);
  Eigen::VectorXd x(dc + 1);
  for (std::size_t i : corpus.train_indices()) {
    const auto& u = corpus.utterances[i];
    const Tensor& y = u.targets[target_speaker];
    for (std::size_t t = 0; t < u.bnf.rows(); ++t) {
      for (std::size_t c = 0; c < dc; ++c) x[static_cast<Eigen::Index>(c)] = u.bnf(t, c);
      x[static_cast<Eigen::Index>(dc)] = 1.0;
      xtx.noalias() += x * x.transpose();
      for (std::size_t o = 0; o < dout; ++o) xty.col(static_cast<Eigen::Index>(o)) += x * static_cast<double>(y(t, o));
    }
  }
  xtx.diagonal().array() += 1e-6;
  const Eigen::MatrixXd w = xtx.ldlt().solve(xty);
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i : corpus.heldout_indices()) {
    const auto& u = corpus.utterances[i];
    const Tensor& y = u.targets[target_speaker];
    for (std::size_t t = 0; t < u.bnf.rows(); ++t) {
      for (std::size_t c = 0; c < dc; ++c) x[static_cast<Eigen::Index>(c)] = u.bnf(t, c);
      x[static_cast<Eigen::Index>(dc)] = 1.0;
      const Eigen::VectorXd pred = w.transpose() * x;
      for (std::size_t o = 0; o < dout; ++o) {
        const double d = pred[static_cast<Eigen::Index>(o)] - y(t, o);
        sse += d * d;
        ++n;
      }
    }
  }
  return sse / static_cast<double>(n);
}

double mean_baseline_mse(const Corpus& corpus, std::size_t target_speaker) {
  const std::size_t dout = corpus.config.feature_dim;
  std::vector<double> mean(dout, 0.0);
  double n = 0;
  for (std::size_t i : corpus.train_indices()) {
    const Tensor& y = corpus.utterances[i].targets.at(target_speaker);
    for (std::size_t t = 0; t < y.rows(); ++t)
      for (std::size_t o = 0; o < dout; ++o) mean[o] += y(t, o);
    n += static_cast<double>(y.rows());
  }
  for (auto& m : mean) m /= n;
  double sse = 0;
  std::size_t count = 0;
  for (std::size_t i : corpus.heldout_indices()) {
    const Tensor& y = corpus.utterances[i].targets.at(target_speaker);
    for (std::size_t t = 0; t < y.rows(); ++t)
      for (std::size_t o = 0; o < dout; ++o) {
        const double d = y(t, o) - mean[o];
        sse += d * d;
        ++count;
      }
  }
  return sse / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_features(const Tensor& frames, float hop_ms) {
  if (frames.rank() != 2) throw ShapeError("feature files hold [T x D] matrices");
  ByteWriter w;
  w.text("DVCF");
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(frames.rows()));
  w.u32(static_cast<std::uint32_t>(frames.cols()));
  w.f32(hop_ms);
  for (float v : frames.data()) w.f32(v);
  return std::move(w.bytes());
}

FeatureFile decode_features(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "feature file");
  if (r.text(4, "magic") != "DVCF") throw FormatError("feature file: bad magic at byte offset 0");
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFileVersion)
    throw FormatError("feature file: unsupported version " + std::to_string(version) + " at byte offset 4");
  const std::uint32_t frames = r.u32("frame count");
  const std::uint32_t dims = r.u32("dimension");
  if (frames == 0 || dims == 0) r.fail("empty matrix header");
  FeatureFile f;
  f.hop_ms = r.f32("hop_ms");
  const std::size_t count = static_cast<std::size_t>(frames) * dims;
  if (r.remaining() != count * 4)
    r.fail("payload is " + std::to_string(r.remaining()) + " bytes, expected " + std::to_string(count * 4));
  std::vector<float> data(count);
  for (auto& v : data) v = r.f32("payload");
  f.frames = Tensor({frames, dims}, std::move(data));
  return f;
}

void write_features(const std::filesystem::path& path, const Tensor& frames, float hop_ms) {
  write_file_bytes(path, encode_features(frames, hop_ms));
}

FeatureFile read_features(const std::filesystem::path& path) {
  return decode_features(read_file_bytes(path));
}

namespace {

std::string utt_name(std::size_t i, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt%04zu", i);
  return std::string(buf) + suffix;
}

nlohmann::json stats_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

ChannelStats stats_from(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  const auto& c = corpus.config;
  nlohmann::json meta;
  meta["config"] = {{"n_speakers", c.n_speakers},
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
  meta["bnf_stats"] = stats_json(corpus.bnf_stats);
  meta["target_stats"] = stats_json(corpus.target_stats);
  nlohmann::json utts = nlohmann::json::array();
  const float hop = static_cast<float>(c.hop_ms);
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    write_features(dir / utt_name(i, ".bnf.dvcf"), u.bnf, hop);
    for (std::size_t s = 0; s < u.targets.size(); ++s)
      write_features(dir / utt_name(i, ".spk" + std::to_string(s) + ".dvcf"), u.targets[s], hop);
    utts.push_back({{"index", i}, {"source_speaker", u.source_speaker}, {"heldout", u.heldout}});
  }
  meta["utterances"] = utts;
  const std::string text = meta.dump(2) + "\n";
  write_file_bytes(dir / "corpus.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "corpus.json");
  const auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());
  Corpus corpus;
  auto& c = corpus.config;
  const auto& jc = meta.at("config");
  c.n_speakers = jc.at("n_speakers");
  c.content_dim = jc.at("content_dim");
  c.feature_dim = jc.at("feature_dim");
  c.utterances_per_speaker = jc.at("utterances_per_speaker");
  c.frames = jc.at("frames");
  c.hop_ms = jc.at("hop_ms");
  c.seed = jc.at("seed");
  c.bnf_noise_std = jc.at("bnf_noise_std");
  c.segment_min = jc.at("segment_min");
  c.segment_max = jc.at("segment_max");
  c.smoothing = jc.at("smoothing");
  c.heldout_every = jc.at("heldout_every");
  c.normalize = jc.at("normalize");
  corpus.bnf_stats = stats_from(meta.at("bnf_stats"));
  corpus.target_stats = stats_from(meta.at("target_stats"));
  for (const auto& ju : meta.at("utterances")) {
    const std::size_t i = ju.at("index");
    Utterance u;
    u.source_speaker = ju.at("source_speaker");
    u.heldout = ju.at("heldout");
    u.bnf = read_features(dir / utt_name(i, ".bnf.dvcf")).frames;
    for (std::size_t s = 0; s < c.n_speakers; ++s)
      u.targets.push_back(read_features(dir / utt_name(i, ".spk" + std::to_string(s) + ".dvcf")).frames);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace dualvc
