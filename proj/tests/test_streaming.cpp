// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "dualvc/streaming.hpp"
#include "helpers.hpp"

using namespace dualvc;

namespace {

ModelConfig stream_model() {
  ModelConfig c;
  c.encoder.input_dim = 6;
  c.encoder.bank_kernel_sizes = {1, 2, 3, 4, 5};
  c.encoder.bank_channels = 4;
  c.encoder.projection_channels = 12;
  c.encoder.highway_layers = 2;
  c.encoder.hidden = 10;
  c.decoder.latent_dim = 10;
  c.decoder.speaker_dim = 4;
  c.decoder.conv_channels = 12;
  c.decoder.prenet = {16, 8};
  c.decoder.gru_hidden = 12;
  c.decoder.output_dim = 7;
  return c;
}

Tensor push_all(Model& model, StreamState& state, const Tensor& x, const std::vector<std::size_t>& sizes) {
  std::vector<Tensor> outs;
  std::size_t begin = 0;
  for (std::size_t c : sizes) {
    outs.push_back(push_chunk(model, state, x.slice_rows(begin, begin + c)).frames);
    begin += c;
  }
  return concat_rows(outs);
}

}  // namespace

TEST_CASE("open_stream") {
  Model model(stream_model());
  StreamState a = open_stream(model, 1);
  CHECK(a.frames_processed == 0);
  // An empty ring reads as zero padding.
  for (const auto& ring : a.bank_context) CHECK(ring.size() == 0);
  for (float v : a.encoder_hidden.data()) CHECK(v == 0.0f);
  for (float v : a.decoder.prev_frame.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(open_stream(model, 4), ArgumentError);

  SUBCASE("independent states") {
    StreamState b = open_stream(model, 1);
    push_chunk(model, a, testing::random32(1, {5, 6}));
    CHECK(a.frames_processed == 5);
    CHECK(b.frames_processed == 0);
    for (float v : b.encoder_hidden.data()) CHECK(v == 0.0f);
    CHECK_FALSE(a.decoder == b.decoder);
  }
}

TEST_CASE("push_chunk") {
  Model model(stream_model());
  const Tensor x = testing::random32(2, {30, 6});
  SUBCASE("one frame at a time equals one chunk") {
    StreamState s1 = open_stream(model, 0), s2 = open_stream(model, 0);
    const Tensor framewise = push_all(model, s1, x, std::vector<std::size_t>(30, 1));
    const Tensor whole = push_chunk(model, s2, x).frames;
    CHECK(max_abs_diff(framewise, whole) <= 1e-5);
    CHECK(framewise == whole);
    CHECK(s1.decoder == s2.decoder);
  }
  SUBCASE("chunk boundaries do not matter") {
    StreamState s1 = open_stream(model, 2), s2 = open_stream(model, 2);
    CHECK(push_all(model, s1, x.slice_rows(0, 3), {1, 2}) == push_all(model, s2, x.slice_rows(0, 3), {2, 1}));
  }
  SUBCASE("matches offline streaming inference") {
    StreamState s = open_stream(model, 3);
    CHECK(push_all(model, s, x, {7, 13, 1, 9}) == model.convert(x, 3, Mode::Streaming));
    CHECK(s.frames_processed == 30);
    const Tensor z = model.encode(x, Mode::Streaming);
    CHECK(s.encoder_hidden.storage() == std::vector<float>(z.row(29).begin(), z.row(29).end()));
  }
  SUBCASE("returns one frame per input frame") {
    StreamState s = open_stream(model, 0);
    const ChunkResult r = push_chunk(model, s, x.slice_rows(0, 4));
    CHECK(r.frames.rows() == 4);
    CHECK(r.frames.cols() == 7);
    CHECK(r.seconds >= 0.0);
  }
  SUBCASE("errors") {
    StreamState s = open_stream(model, 0);
    CHECK_THROWS_AS(push_chunk(model, s, Tensor()), ArgumentError);
    CHECK_THROWS_AS(push_chunk(model, s, testing::random32(1, {4, 5})), ShapeError);
  }
}

TEST_CASE("state size does not grow") {
  Model model(stream_model());
  StreamState s = open_stream(model, 0);
  const std::size_t size = s.byte_size();
  CHECK(size > 0);
  for (int i = 0; i < 10; ++i) {
    push_chunk(model, s, testing::random32(10 + i, {13, 6}));
    CHECK(s.byte_size() == size);
    for (std::size_t b = 0; b < s.bank_context.size(); ++b)
      CHECK(s.bank_context[b].size() <= model.encoder.bank[b].causal_branch.left_context());
  }
}

TEST_CASE("verify_stream_equivalence") {
  Model model(stream_model());
  const Tensor x = testing::random32(3, {40, 6});
  for (double d : verify_stream_equivalence(model, x, {1, 4, 16})) CHECK(d <= 1e-5);
  CHECK(verify_stream_equivalence(model, x, {40}) == std::vector<double>{0.0});
  CHECK_THROWS_AS(verify_stream_equivalence(model, x, {4}, Mode::NonStreaming), ModeError);
}

TEST_CASE("full streaming stack is causal") {
  Model model(stream_model());
  Tensor x = testing::random32(4, {25, 6});
  const Tensor a = model.convert(x, 1, Mode::Streaming);
  x(17, 3) += 1.5f;
  const Tensor b = model.convert(x, 1, Mode::Streaming);
  CHECK(a.slice_rows(0, 17) == b.slice_rows(0, 17));
  CHECK_FALSE(a.slice_rows(17, 18) == b.slice_rows(17, 18));
}
