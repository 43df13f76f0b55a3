// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualvc/rng.hpp"
#include "dualvc/tensor.hpp"

namespace dualvc {

struct SynthCorpusConfig {
  std::size_t n_speakers = 4;
  std::size_t content_dim = 8;
  std::size_t feature_dim = 16;
  std::size_t utterances_per_speaker = 10;
  std::size_t frames = 200;
  double hop_ms = 12.5;
  std::uint64_t seed = 7;
  /// Std of the Gaussian corruption turning content into BNF stand-ins
  /// (variance 0.01).
  double bnf_noise_std = 0.1;
  std::size_t segment_min = 5;
  std::size_t segment_max = 20;
  /// One-pole low-pass coefficient applied to the segment sequence.
  double smoothing = 0.6;
  /// Every n-th utterance of each speaker is held out for evaluation.
  std::size_t heldout_every = 5;
  bool normalize = true;

  void validate() const;
};

struct Utterance {
  std::size_t source_speaker = 0;
  bool heldout = false;
  Tensor content;               // [T x content_dim]
  Tensor bnf;                   // [T x content_dim]
  std::vector<Tensor> targets;  // one [T x feature_dim] per speaker
};

/// Per-channel affine normalization statistics.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct Corpus {
  SynthCorpusConfig config;
  std::vector<Tensor> speaker_maps;     // A_s [feature_dim x content_dim]
  std::vector<Tensor> speaker_offsets;  // b_s [feature_dim]
  ChannelStats bnf_stats;
  ChannelStats target_stats;
  std::vector<Utterance> utterances;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> heldout_indices() const;
};

/// Builds the corpus; a pure function of `cfg`.
///
/// content: piecewise-constant Gaussian segments (length segment_min..max)
/// passed through a one-pole low-pass. Speaker s renders y = A_s c + b_s.
/// BNF = content + N(0, bnf_noise_std^2). With `normalize`, BNF and targets
/// are shifted and scaled per channel to zero mean / unit variance over the
/// whole corpus.
Corpus generate_corpus(const SynthCorpusConfig& cfg);

/// A fresh utterance of `frames` frames rendered with the corpus' speaker
/// maps and normalization, drawn from its own seed.
Utterance generate_utterance(const Corpus& corpus, std::size_t frames, std::uint64_t seed);

/// Held-out MSE of a ridge (1e-6) least-squares affine fit from BNF to the
/// target speaker's features, fitted on the training utterances.
double linear_oracle(const Corpus& corpus, std::size_t target_speaker);

/// Variance of the target speaker's held-out features around the training
/// mean: the predict-the-mean baseline.
double mean_baseline_mse(const Corpus& corpus, std::size_t target_speaker);

// ---------------------------------------------------------------------------
// Feature files: "DVCF", u32 version, u32 T, u32 D, f32 hop_ms, then T*D
// little-endian f32 values, row-major.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureFile {
  Tensor frames;
  float hop_ms = 12.5f;
};

std::vector<std::uint8_t> encode_features(const Tensor& frames, float hop_ms);
FeatureFile decode_features(const std::vector<std::uint8_t>& bytes);
void write_features(const std::filesystem::path& path, const Tensor& frames, float hop_ms);
FeatureFile read_features(const std::filesystem::path& path);

/// Writes every utterance as feature files plus corpus.json.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
/// Reads a directory written by save_corpus (content tensors are not stored
/// and come back empty).
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace dualvc
