// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "dualvc/bytes.hpp"
#include "dualvc/training.hpp"
#include "helpers.hpp"

using namespace dualvc;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.encoder.input_dim = 8;
  c.encoder.bank_kernel_sizes = {1, 2, 3};
  c.encoder.bank_channels = 4;
  c.encoder.projection_channels = 8;
  c.encoder.highway_layers = 1;
  c.encoder.hidden = 8;
  c.decoder.latent_dim = 8;
  c.decoder.speaker_dim = 4;
  c.decoder.conv_blocks = 1;
  c.decoder.conv_channels = 8;
  c.decoder.prenet = {16, 8};
  c.decoder.gru_hidden = 12;
  c.decoder.output_dim = 16;
  c.hpc.gnet_hidden = 8;
  return c;
}

SynthCorpusConfig small_corpus() {
  SynthCorpusConfig c;
  c.utterances_per_speaker = 5;
  c.frames = 80;
  return c;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.steps = 20;
  t.crop_frames = 32;
  return t;
}

}  // namespace

TEST_CASE("reconstruction loss") {
  Graph<float> g(false);
  const Tensor y = testing::random32(1, {4, 3});
  CHECK(reconstruction_loss(g.constant(y), g.constant(y)).value()[0] == 0.0f);
  Tensor shifted = y;
  for (auto& v : shifted.data()) v += 0.5f;
  CHECK(reconstruction_loss(g.constant(y), g.constant(shifted)).value()[0] == doctest::Approx(0.25).epsilon(1e-6));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor a = testing::random32(10 + seed, {4, 3}), b = testing::random32(20 + seed, {4, 3});
    double ref = 0.0;
    for (std::size_t i = 0; i < 12; ++i) ref += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    CHECK(std::abs(reconstruction_loss(g.constant(a), g.constant(b)).value()[0] - ref / 12.0) < 1e-7 * std::max(1.0, ref));
  }
  CHECK_THROWS_AS(reconstruction_loss(g.constant(y), g.constant(Tensor({3, 4}))), ShapeError);
}

TEST_CASE("train step") {
  const Corpus corpus = generate_corpus(small_corpus());
  SUBCASE("breakdown sums exactly") {
    Model model(small_model());
    Trainer trainer(model, corpus, quick_train());
    for (int i = 0; i < 3; ++i) {
      const LossBreakdown l = trainer.step();
      const float expected = (l.distill + (l.hpc_streaming + l.hpc_nonstreaming)) +
                             (l.rec_streaming + l.rec_nonstreaming);
      CHECK(l.total == expected);
    }
  }
  SUBCASE("same seed, same trajectory") {
    std::vector<float> runs[2];
    for (auto& run : runs) {
      Model model(small_model());
      Trainer trainer(model, corpus, quick_train());
      for (int i = 0; i < 5; ++i) run.push_back(trainer.step().total);
    }
    CHECK(runs[0] == runs[1]);
  }
  SUBCASE("augmented and original batches alternate") {
    Model model(small_model());
    Trainer trainer(model, corpus, quick_train());
    for (int i = 0; i < 6; ++i) CHECK(trainer.step().augmented == (i % 2 == 1));
  }
  SUBCASE("empty batch") {
    Model model(small_model());
    Adam adam(quick_train());
    Rng rng(1);
    CHECK_THROWS_AS(train_step(model, adam, {}, rng, quick_train()), ArgumentError);
  }
  SUBCASE("non-finite loss names the offending op") {
    Model model(small_model());
    Adam adam(quick_train());
    Rng rng(1);
    Example ex{corpus.utterances[0].bnf.slice_rows(0, 32), 1, corpus.utterances[0].targets[1].slice_rows(0, 32)};
    ex.bnf[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(train_step(model, adam, {ex}, rng, quick_train()), NonFiniteError);
  }
}

TEST_CASE("training reduces the loss") {
  const Corpus corpus = generate_corpus(SynthCorpusConfig{});
  std::vector<double> ratios;
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig mc = small_model();
    mc.seed = seed;
    Model model(mc);
    TrainConfig tc;
    tc.seed = seed;
    Trainer trainer(model, corpus, tc);
    std::vector<float> totals;
    for (int i = 0; i < 200; ++i) totals.push_back(trainer.step().total);
    // Windowed means smooth the alternation between original and augmented batches.
    auto window = [&](std::size_t begin) {
      double s = 0.0;
      for (std::size_t i = begin; i < begin + 20; ++i) s += totals[i];
      return s / 20.0;
    };
    ratios.push_back(window(180) / window(0));
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] < 1.0);
}

TEST_CASE("gradient noise") {
  Parameter<float> p("p", ParamGroup::Autoregressive, Tensor({100000}));
  p.grad = testing::random32(1, {100000});
  const Tensor before = p.grad;
  Rng rng(2);
  add_gradient_noise({&p}, rng, 0.0);
  CHECK(p.grad == before);
  add_gradient_noise({&p}, rng, 1e-3);
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) mean += static_cast<double>(p.grad[i]) - before[i];
  mean /= before.size();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double d = static_cast<double>(p.grad[i]) - before[i] - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / before.size());
  CHECK(sd > 0.9e-3);
  CHECK(sd < 1.1e-3);
}

TEST_CASE("gradient noise touches only the autoregressive module") {
  Model model(small_model());
  const auto ar = model.decoder.autoregressive_parameters();
  auto all = model.parameters();
  for (auto* p : all) p->grad = testing::random32(3, p->value.shape());
  std::vector<Tensor> before;
  for (auto* p : all) before.push_back(p->grad);
  Rng rng(4);
  add_gradient_noise(ar, rng, 1e-3);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool is_ar = std::find(ar.begin(), ar.end(), all[i]) != ar.end();
    CHECK(is_ar == (all[i]->group == ParamGroup::Autoregressive));
    if (!is_ar) CHECK(all[i]->grad == before[i]);
    else CHECK_FALSE(all[i]->grad == before[i]);
  }
}

TEST_CASE("tempo augmentation") {
  const Tensor x = testing::random32(1, {100, 3});
  CHECK(tempo_augment(x, 1.0) == x);
  CHECK(tempo_augment(x, 0.8).rows() == 125);
  const Tensor c({100, 3}, 0.75f);
  const Tensor fast = tempo_augment(c, 1.5);
  CHECK(fast.rows() == 67);
  for (float v : fast.data()) CHECK(v == doctest::Approx(0.75f));
  CHECK_THROWS_AS(tempo_augment(x, 0.79), ArgumentError);
  CHECK_THROWS_AS(tempo_augment(x, 1.51), ArgumentError);
  // Linear interpolation of a ramp stays a ramp with aligned endpoints.
  Tensor ramp({11, 1});
  for (std::size_t t = 0; t < 11; ++t) ramp[t] = static_cast<float>(t);
  const Tensor slow = tempo_augment(ramp, 0.8);
  REQUIRE(slow.rows() == 14);
  CHECK(slow[0] == 0.0f);
  CHECK(slow[13] == doctest::Approx(10.0f));
  for (std::size_t t = 1; t < 14; ++t) CHECK(slow[t] - slow[t - 1] == doctest::Approx(10.0 / 13.0).epsilon(1e-5));
}

TEST_CASE("adam respects per-group learning-rate scales") {
  TrainConfig tc;
  tc.causal_lr_scale = 0.0;
  Parameter<float> causal("c", ParamGroup::Causal, Tensor({3}, 1.0f));
  Parameter<float> shared("s", ParamGroup::Shared, Tensor({3}, 1.0f));
  causal.grad = Tensor({3}, 0.5f);
  shared.grad = Tensor({3}, 0.5f);
  Adam adam(tc);
  adam.step({&causal, &shared});
  CHECK(causal.value == Tensor({3}, 1.0f));
  CHECK(shared.value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-5));
}

TEST_CASE("cosine learning-rate schedule") {
  TrainConfig tc;
  tc.steps = 100;
  CHECK(tc.schedule(1) == 1.0);
  CHECK(tc.schedule(90) == 1.0);
  tc.final_lr_fraction = 0.1;
  CHECK(tc.schedule(1) == doctest::Approx(1.0));
  CHECK(tc.schedule(51) == doctest::Approx(0.55));
  CHECK(tc.schedule(101) == doctest::Approx(0.1));
  CHECK(tc.schedule(500) == doctest::Approx(0.1));
  tc.final_lr_fraction = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("checkpoints") {
  const auto dir = testing::temp_dir("ckpt");
  Model model(small_model());
  const auto a = dir / "a.dvcm", b = dir / "b.dvcm";
  save_checkpoint(a, model, 17);
  SUBCASE("save, load, save is byte-identical") {
    const Checkpoint ck = load_checkpoint(a);
    CHECK(ck.step == 17);
    Model restored = model_from_checkpoint(ck);
    save_checkpoint(b, restored, ck.step);
    CHECK(read_file_bytes(a) == read_file_bytes(b));
  }
  SUBCASE("restored model reproduces outputs") {
    Model restored = model_from_checkpoint(load_checkpoint(a));
    const Tensor x = testing::random32(5, {20, 8});
    for (Mode mode : {Mode::Streaming, Mode::NonStreaming})
      CHECK(restored.convert(x, 2, mode) == model.convert(x, 2, mode));
  }
  SUBCASE("inference parameters only") {
    const Checkpoint ck = load_checkpoint(a);
    CHECK(ck.tensors.size() == model.inference_parameters().size());
    for (const auto& [name, t] : ck.tensors) CHECK(name.rfind("hpc.", 0) != 0);
  }
  SUBCASE("truncation and corruption") {
    auto bytes = read_file_bytes(a);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(decode_checkpoint(part), FormatError);
    }
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 99;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.dvcm"), Error);
  }
  SUBCASE("missing tensor is rejected") {
    Checkpoint ck = load_checkpoint(a);
    ck.tensors.pop_back();
    CHECK_THROWS_AS(model_from_checkpoint(ck), FormatError);
  }
}

TEST_CASE("detach isolation during training") {
  // Only the non-causal branches learn: the distillation term must not move
  // them, so non-streaming validation trajectories match exactly.
  const Corpus corpus = generate_corpus(small_corpus());
  std::vector<double> trajectories[2];
  for (int run = 0; run < 2; ++run) {
    Model model(small_model());
    TrainConfig tc = quick_train();
    tc.shared_lr_scale = tc.causal_lr_scale = tc.autoregressive_lr_scale = tc.predictive_lr_scale = 0.0;
    tc.distill_weight = run == 0 ? 1.0 : 0.0;
    Trainer trainer(model, corpus, tc);
    for (int i = 0; i < 6; ++i) {
      trainer.step();
      trajectories[run].push_back(heldout_teacher_forced_mse(model, corpus, Mode::NonStreaming));
    }
  }
  CHECK(trajectories[0] == trajectories[1]);
  CHECK(trajectories[0].front() != trajectories[0].back());
}
