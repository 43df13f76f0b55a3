// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "dualvc/bytes.hpp"
#include "dualvc/synthdata.hpp"
#include "helpers.hpp"

using namespace dualvc;

namespace {

SynthCorpusConfig small_cfg() {
  SynthCorpusConfig c;
  c.n_speakers = 3;
  c.utterances_per_speaker = 5;
  c.frames = 120;
  return c;
}

bool same(const Tensor& a, const Tensor& b) { return a == b; }

std::string error_text(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_features(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("corpus generation is deterministic") {
  const auto a = generate_corpus(small_cfg());
  const auto b = generate_corpus(small_cfg());
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(same(a.utterances[i].bnf, b.utterances[i].bnf));
    for (std::size_t s = 0; s < 3; ++s) CHECK(same(a.utterances[i].targets[s], b.utterances[i].targets[s]));
  }
  SynthCorpusConfig other = small_cfg();
  other.seed = 8;
  CHECK_FALSE(same(generate_corpus(other).utterances[0].bnf, a.utterances[0].bnf));
}

TEST_CASE("targets are an exact affine map of content before normalization") {
  SynthCorpusConfig cfg = small_cfg();
  cfg.normalize = false;
  const auto corpus = generate_corpus(cfg);
  double worst = 0.0;
  for (const auto& u : corpus.utterances)
    for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
      const Tensor& a = corpus.speaker_maps[s];
      const Tensor& b = corpus.speaker_offsets[s];
      for (std::size_t t = 0; t < cfg.frames; ++t)
        for (std::size_t o = 0; o < cfg.feature_dim; ++o) {
          double y = b[o];
          for (std::size_t c = 0; c < cfg.content_dim; ++c) y += double(a(o, c)) * u.content(t, c);
          worst = std::max(worst, std::abs(y - u.targets[s](t, o)));
        }
    }
  CHECK(worst < 1e-5);
}

TEST_CASE("segment structure and bnf corruption") {
  SynthCorpusConfig cfg = small_cfg();
  cfg.normalize = false;
  cfg.smoothing = 0.0;
  const auto corpus = generate_corpus(cfg);
  const Tensor& c = corpus.utterances[0].content;
  // Without smoothing content is piecewise constant; runs are 5..20 frames
  // except the final truncated one.
  std::vector<std::size_t> runs{1};
  for (std::size_t t = 1; t < c.rows(); ++t) {
    if (c(t, 0) == c(t - 1, 0)) ++runs.back();
    else runs.push_back(1);
  }
  for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
    CHECK(runs[i] >= 5);
    CHECK(runs[i] <= 20);
  }
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& u : corpus.utterances)
    for (std::size_t i = 0; i < u.bnf.size(); ++i) {
      const double d = u.bnf[i] - u.content[i];
      sq += d * d;
      ++n;
    }
  CHECK(sq / double(n) == doctest::Approx(0.01).epsilon(0.1));
}

TEST_CASE("distinct speakers have distinct mean features") {
  const auto corpus = generate_corpus(small_cfg());
  std::vector<std::vector<double>> mu(3, std::vector<double>(16, 0.0));
  for (const auto& u : corpus.utterances)
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t t = 0; t < u.targets[s].rows(); ++t)
        for (std::size_t o = 0; o < 16; ++o) mu[s][o] += u.targets[s](t, o);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) {
      double d = 0.0;
      for (std::size_t o = 0; o < 16; ++o) d += (mu[a][o] - mu[b][o]) * (mu[a][o] - mu[b][o]);
      CHECK(d > 0.0);
    }
}

TEST_CASE("normalization statistics") {
  const auto corpus = generate_corpus(small_cfg());
  auto check = [](const std::vector<const Tensor*>& parts) {
    const std::size_t d = parts.front()->cols();
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0, s2 = 0, n = 0;
      for (const Tensor* p : parts)
        for (std::size_t t = 0; t < p->rows(); ++t) {
          s += (*p)(t, c);
          s2 += double((*p)(t, c)) * (*p)(t, c);
          n += 1;
        }
      const double mean = s / n;
      const double sd = std::sqrt(s2 / n - mean * mean);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(sd >= 1 - 1e-4);
      CHECK(sd <= 1 + 1e-4);
    }
  };
  std::vector<const Tensor*> bnf, tgt;
  for (const auto& u : corpus.utterances) {
    bnf.push_back(&u.bnf);
    for (const auto& y : u.targets) tgt.push_back(&y);
  }
  check(bnf);
  check(tgt);
}

TEST_CASE("linear oracle") {
  SynthCorpusConfig cfg = small_cfg();
  cfg.bnf_noise_std = 0.0;
  const auto clean = generate_corpus(cfg);
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) CHECK(linear_oracle(clean, s) < 1e-10);

  const auto noisy = generate_corpus(small_cfg());
  for (std::size_t s = 0; s < 3; ++s) {
    const double oracle = linear_oracle(noisy, s);
    MESSAGE("speaker " << s << " oracle mse " << oracle);
    CHECK(oracle > 1e-6);
    CHECK(oracle <= mean_baseline_mse(noisy, s));
  }
  CHECK_THROWS_AS(linear_oracle(noisy, 3), ArgumentError);
}

TEST_CASE("config validation") {
  SynthCorpusConfig cfg = small_cfg();
  cfg.n_speakers = 1;
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
  cfg = small_cfg();
  cfg.segment_max = 2;
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
}

TEST_CASE("generate_utterance uses the corpus maps") {
  const auto corpus = generate_corpus(small_cfg());
  const auto a = generate_utterance(corpus, 50, 3);
  const auto b = generate_utterance(corpus, 50, 3);
  CHECK(a.bnf.rows() == 50);
  CHECK(a.targets.size() == 3);
  CHECK(same(a.targets[1], b.targets[1]));
}

TEST_CASE("feature file round trip") {
  const Tensor x = testing::random32(5, {17, 9});
  const auto dir = testing::temp_dir("features");
  write_features(dir / "x.dvcf", x, 10.0f);
  const auto f = read_features(dir / "x.dvcf");
  CHECK(same(f.frames, x));
  CHECK(f.hop_ms == 10.0f);
  CHECK(std::filesystem::file_size(dir / "x.dvcf") == 20 + 4 * 17 * 9);
}

TEST_CASE("feature file errors carry byte offsets") {
  const Tensor x = testing::random32(6, {3, 2});
  auto bytes = encode_features(x, 12.5f);
  auto cut = bytes;
  cut.pop_back();
  CHECK(error_text(cut).find("byte offset 20") != std::string::npos);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(error_text(magic).find("byte offset 0") != std::string::npos);

  auto version = bytes;
  version[4] = 9;
  CHECK(error_text(version).find("byte offset 4") != std::string::npos);

  auto header = bytes;
  header.resize(10);
  CHECK(error_text(header).find("byte offset 8") != std::string::npos);

  auto longer = bytes;
  longer.push_back(0);
  CHECK_FALSE(error_text(longer).empty());
}

TEST_CASE("golden fixture") {
  const auto f = read_features(testing::data_path("golden_2x3.dvcf"));
  REQUIRE(f.frames.shape() == Shape{2, 3});
  const std::vector<float> expect{1.0f, -2.5f, 0.125f, 3.0f, 0.0f, -0.75f};
  CHECK(f.frames.storage() == expect);
  CHECK(f.hop_ms == 12.5f);
  CHECK(encode_features(f.frames, f.hop_ms) == read_file_bytes(testing::data_path("golden_2x3.dvcf")));
}

TEST_CASE("corpus save and load") {
  const auto corpus = generate_corpus(small_cfg());
  const auto dir = testing::temp_dir("corpus");
  save_corpus(dir, corpus);
  const auto back = load_corpus(dir);
  CHECK(back.config.n_speakers == 3);
  REQUIRE(back.utterances.size() == corpus.utterances.size());
  CHECK(back.heldout_indices() == corpus.heldout_indices());
  CHECK(same(back.utterances[4].bnf, corpus.utterances[4].bnf));
  CHECK(same(back.utterances[4].targets[2], corpus.utterances[4].targets[2]));
  CHECK(back.target_stats.mean == corpus.target_stats.mean);
}
