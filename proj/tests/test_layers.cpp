// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "dualvc/gradcheck.hpp"
#include "dualvc/layers.hpp"
#include "helpers.hpp"

using namespace dualvc;

namespace {

// Single-channel conv of the sequence [1,2,3,4] with kernel taps `taps`.
std::vector<float> conv_1ch(std::vector<float> taps, bool causal) {
  Graph<float> g(false);
  const std::size_t k = taps.size();
  const auto p = Padding::for_kernel(k, causal);
  Var<float> x = g.constant(Tensor({4, 1}, std::vector<float>{1, 2, 3, 4}));
  Var<float> w = g.constant(Tensor({1, 1, k}, std::move(taps)));
  Var<float> b = g.constant(Tensor({1}));
  return ops::conv1d(x, w, b, p.left, p.right).value().storage();
}

template <typename T>
void zero_all(ParamList<T> params) {
  for (auto* p : params)
    for (auto& v : p->value.data()) v = T(0);
}

}  // namespace

TEST_CASE("padding conventions") {
  CHECK(Padding::for_kernel(3, true).left == 2);
  CHECK(Padding::for_kernel(3, true).right == 0);
  CHECK(Padding::for_kernel(3, false).left == 1);
  CHECK(Padding::for_kernel(3, false).right == 1);
  CHECK(Padding::for_kernel(4, false).left == 2);
  CHECK(Padding::for_kernel(4, false).right == 1);
  CHECK(Padding::for_kernel(1, false).left == 0);
}

TEST_CASE("conv1d taps") {
  CHECK(conv_1ch({0, 0, 1}, true) == std::vector<float>{1, 2, 3, 4});
  CHECK(conv_1ch({1, 0, 0}, true) == std::vector<float>{0, 0, 1, 2});
  CHECK(conv_1ch({0, 0, 1}, false) == std::vector<float>{2, 3, 4, 0});
}

TEST_CASE("conv1d channel mismatch") {
  Graph<float> g(false);
  Var<float> x = g.constant(Tensor({4, 2}));
  Var<float> w = g.constant(Tensor({1, 3, 1}));
  Var<float> b = g.constant(Tensor({1}));
  CHECK_THROWS_AS(ops::conv1d(x, w, b, 0, 0), ShapeError);
}

TEST_CASE("convolutions preserve length") {
  Rng rng(1);
  for (std::size_t k = 1; k <= 8; ++k)
    for (bool causal : {true, false}) {
      BasicConvLayer<float> layer("l", ParamGroup::Causal, 3, 5, k, causal, 0.0, rng);
      Graph<float> g(false);
      for (std::size_t t : {1, 2, 9}) {
        const Tensor x = testing::random32(k + t, {t, 3});
        CHECK(layer.forward(g, g.constant(x), false, rng).value().rows() == t);
      }
    }
}

TEST_CASE("basic conv layer") {
  Rng rng(2);
  SUBCASE("zero weights give zero output") {
    BasicConvLayer<float> layer("l", ParamGroup::Causal, 3, 4, 5, true, 0.1, rng);
    ParamList<float> params;
    layer.collect(params);
    zero_all(params);
    Graph<float> g(false);
    const Tensor y = layer.forward(g, g.constant(testing::random32(3, {12, 3})), false, rng).value();
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("dropout zero makes training identical to inference") {
    BasicConvLayer<float> layer("l", ParamGroup::Causal, 3, 4, 5, true, 0.0, rng);
    const Tensor x = testing::random32(4, {12, 3});
    Graph<float> g(false);
    Rng r1(5);
    CHECK(layer.forward(g, g.constant(x), true, r1).value() == layer.forward(g, g.constant(x), false, r1).value());
  }
  SUBCASE("causal layer ignores the future") {
    BasicConvLayer<float> layer("l", ParamGroup::Causal, 3, 4, 5, true, 0.1, rng);
    Tensor x = testing::random32(6, {20, 3});
    Graph<float> g(false);
    const Tensor a = layer.forward(g, g.constant(x), false, rng).value();
    x(10, 1) += 3.0f;
    const Tensor b = layer.forward(g, g.constant(x), false, rng).value();
    CHECK(a.slice_rows(0, 10) == b.slice_rows(0, 10));
    CHECK_FALSE(a.slice_rows(10, 11) == b.slice_rows(10, 11));
  }
  SUBCASE("dropout rate must be below one") {
    CHECK_THROWS_AS(BasicConvLayer<float>("l", ParamGroup::Causal, 3, 4, 5, true, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(BasicConvLayer<float>("l", ParamGroup::Causal, 3, 4, 5, true, -0.1, rng), ConfigError);
  }
  SUBCASE("gradient check") {
    Rng r64(3);
    BasicConvLayer<double> layer("l", ParamGroup::Causal, 3, 4, 3, false, 0.0, r64);
    ParamList<double> params;
    layer.collect(params);
    const Tensor64 x = testing::random64(7, {9, 3});
    const Tensor64 w = testing::random64(8, {9, 4});
    const auto res = grad_check_params(
        [&](Graph<double>& g) {
          Rng unused(0);
          return ops::mean_all(ops::mul(layer.forward(g, g.constant(x), false, unused), g.constant(w)));
        },
        params);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("dual-mode block dispatch") {
  Rng rng(4);
  DualModeConvBlock<float> block("b", 3, 4, 5, 0.0, rng);
  const Tensor x = testing::random32(9, {15, 3});
  Graph<float> g(false);
  Rng unused(0);
  CHECK(block.forward(g, g.constant(x), Mode::Streaming, false, unused).value() ==
        block.causal_branch.forward(g, g.constant(x), false, unused).value());
  CHECK(block.forward(g, g.constant(x), Mode::NonStreaming, false, unused).value() ==
        block.noncausal_branch.forward(g, g.constant(x), false, unused).value());
  CHECK_FALSE(block.forward(g, g.constant(x), Mode::Streaming, false, unused).value() ==
              block.forward(g, g.constant(x), Mode::NonStreaming, false, unused).value());

  SUBCASE("unselected branch receives no gradient") {
    ParamList<float> params;
    block.collect(params);
    for (auto* p : params) p->zero_grad();
    Graph<float> tape;
    tape.backward(ops::mean_all(block.forward(tape, tape.constant(x), Mode::Streaming, true, unused)));
    bool causal_nonzero = false;
    for (auto* p : params) {
      if (p->group == ParamGroup::NonCausal)
        for (float v : p->grad.data()) CHECK(v == 0.0f);
      else
        for (float v : p->grad.data()) causal_nonzero = causal_nonzero || v != 0.0f;
    }
    CHECK(causal_nonzero);
  }
}

TEST_CASE("gru step") {
  Rng rng(5);
  GruLayer<float> gru("g", ParamGroup::Shared, 1, 1, rng);
  ParamList<float> params;
  gru.collect(params);
  zero_all(params);
  CHECK(gru.step(Tensor({1}, std::vector<float>{0.7f}), Tensor({1}, std::vector<float>{1.0f}))[0] == 0.5f);
  CHECK(gru.step(Tensor({1}, std::vector<float>{0.7f}), Tensor({1}))[0] == 0.0f);
  CHECK_THROWS_AS(gru.step(Tensor({2}), Tensor({1})), ShapeError);
}

TEST_CASE("gru sequence equals fold of steps") {
  Rng rng(6);
  GruLayer<float> gru("g", ParamGroup::Shared, 3, 4, rng);
  const Tensor x = testing::random32(10, {6, 3});
  Graph<float> g(false);
  const Tensor seq = gru.forward(g, g.constant(x)).value();
  Tensor h({4});
  for (std::size_t t = 0; t < 6; ++t) {
    h = gru.step(Tensor({3}, std::vector<float>(x.row(t).begin(), x.row(t).end())), h);
    CHECK(std::vector<float>(seq.row(t).begin(), seq.row(t).end()) == h.storage());
  }
}

TEST_CASE("gru is unidirectional") {
  Rng rng(7);
  GruLayer<float> gru("g", ParamGroup::Shared, 3, 4, rng);
  Tensor x = testing::random32(11, {12, 3});
  Graph<float> g(false);
  const Tensor a = gru.forward(g, g.constant(x)).value();
  x(7, 0) -= 2.0f;
  const Tensor b = gru.forward(g, g.constant(x)).value();
  CHECK(a.slice_rows(0, 7) == b.slice_rows(0, 7));
}

TEST_CASE("layer gradients") {
  Rng rng(8);
  const Tensor64 x = testing::random64(12, {5, 4});
  auto check = [&](auto& layer, auto forward) {
    ParamList<double> params;
    layer.collect(params);
    const auto res = grad_check_params(
        [&](Graph<double>& g) {
          Var<double> y = forward(g, g.constant(x));
          return ops::mean_all(ops::mul(y, g.constant(testing::random64(13, y.shape()))));
        },
        params);
    CHECK(res.max_rel_error < 1e-4);
  };
  Linear<double> lin("lin", ParamGroup::Shared, 4, 3, rng);
  check(lin, [&](Graph<double>& g, Var<double> v) { return lin.forward(g, v); });
  Highway<double> hw("hw", ParamGroup::Shared, 4, rng);
  check(hw, [&](Graph<double>& g, Var<double> v) { return hw.forward(g, v); });
  GruLayer<double> gru("gru", ParamGroup::Shared, 4, 3, rng);
  check(gru, [&](Graph<double>& g, Var<double> v) { return gru.forward(g, v); });
  LayerNorm<double> ln("ln", ParamGroup::Shared, 4);
  check(ln, [&](Graph<double>& g, Var<double> v) { return ln.forward(g, v); });
  Conv1d<double> conv("conv", ParamGroup::Shared, 4, 2, 3, true, rng);
  check(conv, [&](Graph<double>& g, Var<double> v) { return conv.forward(g, v); });
  DepthwiseConv1d<double> dw("dw", ParamGroup::Shared, 4, 4, false, rng);
  check(dw, [&](Graph<double>& g, Var<double> v) { return dw.forward(g, v); });
}

TEST_CASE("dropout") {
  Rng rng(9);
  Graph<float> g(false);
  const Tensor x({1000}, 1.0f);
  const Tensor y = ops::dropout(g.constant(x), 0.5, rng).value();
  std::size_t kept = 0;
  for (float v : y.data()) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  CHECK(kept > 430);
  CHECK(kept < 570);
}
