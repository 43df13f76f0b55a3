// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "dualvc/encoder.hpp"
#include "dualvc/hpc.hpp"
#include "helpers.hpp"

using namespace dualvc;

namespace {

HpcConfig config(std::size_t steps, std::size_t negatives, std::size_t hidden = 5) {
  HpcConfig c;
  c.steps = steps;
  c.negatives = negatives;
  c.gnet_hidden = hidden;
  return c;
}

// Reference InfoNCE computed term by term in double precision.
double cpc_reference(CpcHead<float>& head, const Tensor& z, std::size_t negatives, Rng& rng) {
  Graph<float> g(false);
  const Tensor r = head.gnet.forward(g, g.constant(z)).value();
  const std::size_t frames = z.rows(), h = z.cols(), gh = r.cols();
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t j = 1; j <= head.steps(); ++j) {
    const Tensor& w = head.scores[j - 1].weight.value;  // [h x gh]
    for (std::size_t t = 0; t + j < frames; ++t) {
      std::vector<double> pred(h, 0.0);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t k = 0; k < gh; ++k) pred[i] += static_cast<double>(w(i, k)) * r(t, k);
      auto score = [&](std::size_t src) {
        double s = 0.0;
        for (std::size_t i = 0; i < h; ++i) s += pred[i] * z(src, i);
        return s;
      };
      std::vector<double> s{score(t + j)};
      for (std::size_t n : sample_negatives(rng, frames, t + j, negatives)) s.push_back(score(n));
      double denom = 0.0;
      for (double v : s) denom += std::exp(v);
      total += -(s[0] - std::log(denom));
      ++terms;
    }
  }
  return total / static_cast<double>(terms);
}

double apc_reference(ApcHead<float>& head, const Tensor& z) {
  Graph<float> g(false);
  const Tensor r = head.gnet.forward(g, g.constant(z)).value();
  const std::size_t frames = z.rows(), h = z.cols(), gh = r.cols();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 1; j <= head.steps(); ++j) {
    const auto& lin = head.predictors[j - 1];
    for (std::size_t t = 0; t + j < frames; ++t)
      for (std::size_t i = 0; i < h; ++i) {
        double p = lin.bias.value[i];
        for (std::size_t k = 0; k < gh; ++k) p += static_cast<double>(lin.weight.value(i, k)) * r(t, k);
        total += std::abs(p - z(t + j, i));
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("sample_negatives") {
  Rng rng(1);
  SUBCASE("forced choice") {
    auto n = sample_negatives(rng, 3, 1, 2);
    std::sort(n.begin(), n.end());
    CHECK(n == std::vector<std::size_t>{0, 2});
  }
  SUBCASE("distinct and never the positive") {
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t frames = 10 + trial % 7, pos = trial % frames;
      const auto n = sample_negatives(rng, frames, pos, 8);
      CHECK(n.size() == 8);
      CHECK(std::set<std::size_t>(n.begin(), n.end()).size() == 8);
      CHECK(std::find(n.begin(), n.end(), pos) == n.end());
    }
  }
  SUBCASE("uniform frequencies") {
    std::vector<double> counts(100, 0.0);
    for (int i = 0; i < 10000; ++i)
      for (std::size_t n : sample_negatives(rng, 100, 37, 8)) counts[n] += 1.0;
    const double expected = 10000.0 * 8.0 / 99.0;
    CHECK(counts[37] == 0.0);
    for (std::size_t i = 0; i < 100; ++i)
      if (i != 37) {
        CHECK(counts[i] > 0.8 * expected);
        CHECK(counts[i] < 1.2 * expected);
      }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(sample_negatives(rng, 8, 0, 8), ConfigError);
    CHECK_THROWS_AS(sample_negatives(rng, 10, 10, 3), ArgumentError);
  }
}

TEST_CASE("cpc loss") {
  Rng init(2);
  SUBCASE("uniform scores give ln(n+1)") {
    CpcHead<float> head(config(3, 7), 4, init);
    for (auto& s : head.scores)
      for (auto& v : s.weight.value.data()) v = 0.0f;
    Graph<float> g(false);
    Rng rng(3);
    const float loss = cpc_loss(g, head, g.constant(testing::random32(4, {12, 4})), 7, rng).value()[0];
    CHECK(loss == doctest::Approx(std::log(8.0)).epsilon(1e-6));
    CHECK(std::abs(loss - 2.07944) < 1e-5);
  }
  SUBCASE("saturated softmax") {
    Graph<float> g(false);
    Tensor s({3, 8}, -20.0f);
    for (std::size_t r = 0; r < 3; ++r) s(r, 0) = 20.0f;
    CHECK(ops::nce_first(g.constant(s)).value()[0] < 1e-8f);
  }
  SUBCASE("matches a term-by-term reference") {
    CpcHead<float> head(config(2, 3), 4, init);
    const Tensor z = testing::random32(5, {10, 4});
    Graph<float> g(false);
    Rng a(6), b(6);
    const double got = cpc_loss(g, head, g.constant(z), 3, a).value()[0];
    CHECK(std::abs(got - cpc_reference(head, z, 3, b)) < 1e-6);
  }
  SUBCASE("insufficient context") {
    CpcHead<float> head(config(4, 2), 4, init);
    Graph<float> g(false);
    Rng rng(1);
    CHECK_THROWS_AS(cpc_loss(g, head, g.constant(testing::random32(1, {5, 4})), 2, rng), InsufficientContextError);
    CHECK_NOTHROW(cpc_loss(g, head, g.constant(testing::random32(1, {6, 4})), 2, rng));
  }
}

TEST_CASE("apc loss") {
  Rng init(7);
  ApcHead<float> head(config(3, 2), 4, init);
  SUBCASE("exact and offset predictions") {
    for (auto& p : head.predictors) {
      for (auto& v : p.weight.value.data()) v = 0.0f;
      p.bias.value = Tensor({4}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.25f});
    }
    Tensor z({9, 4});
    for (std::size_t t = 0; t < 9; ++t) std::copy_n(head.predictors[0].bias.value.data().begin(), 4, z.row(t).begin());
    Graph<float> g(false);
    CHECK(apc_loss(g, head, g.constant(z)).value()[0] == 0.0f);
    for (auto& p : head.predictors)
      for (auto& v : p.bias.value.data()) v += 0.3f;
    CHECK(apc_loss(g, head, g.constant(z)).value()[0] == doctest::Approx(0.3).epsilon(1e-6));
  }
  SUBCASE("matches a loop reference") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor z = testing::random32(100 + seed, {10, 4});
      Graph<float> g(false);
      CHECK(std::abs(apc_loss(g, head, g.constant(z)).value()[0] - apc_reference(head, z)) < 1e-6);
    }
  }
  SUBCASE("insufficient context") {
    Graph<float> g(false);
    CHECK_THROWS_AS(apc_loss(g, head, g.constant(testing::random32(1, {3, 4}))), InsufficientContextError);
  }
  SUBCASE("targets are detached by default") {
    Parameter<float> zp("z", ParamGroup::Shared, testing::random32(8, {8, 4}));
    Graph<float> g;
    Var<float> z = g.param(zp);
    zp.zero_grad();
    g.backward(apc_loss(g, head, z, true));
    const Tensor detached = zp.grad;
    zp.zero_grad();
    Graph<float> g2;
    g2.backward(apc_loss(g2, head, g2.param(zp), false));
    CHECK_FALSE(detached == zp.grad);
    // The last frame is only ever a target.
    for (std::size_t c = 0; c < 4; ++c) CHECK(detached(7, c) == 0.0f);
  }
}

TEST_CASE("hpc loss is the exact sum") {
  Rng init(9);
  const HpcConfig cfg = config(2, 3);
  CpcHead<float> cpc(cfg, 4, init);
  ApcHead<float> apc(cfg, 4, init);
  const Tensor z = testing::random32(10, {12, 4});
  Graph<float> g(false);
  Rng a(4), b(4);
  const HpcLoss<float> both = hpc_loss(g, cpc, apc, g.constant(z), cfg, a);
  const float c = cpc_loss(g, cpc, g.constant(z), cfg.negatives, b).value()[0];
  const float p = apc_loss(g, apc, g.constant(z)).value()[0];
  CHECK(both.total.value()[0] == c + p);
  CHECK(both.cpc.value()[0] == c);
  CHECK(both.apc.value()[0] == p);
  CHECK(ops::add(g.constant(Tensor({1}, 2.0794f)), g.constant(Tensor({1}, 0.3f))).value()[0] ==
        doctest::Approx(2.3794));
  CHECK(ops::add(g.constant(Tensor({1})), g.constant(Tensor({1}))).value()[0] == 0.0f);

  HpcConfig mismatched = cfg;
  mismatched.steps = 3;
  ApcHead<float> other(mismatched, 4, init);
  CHECK_THROWS_AS(hpc_loss(g, cpc, other, g.constant(z), cfg, a), ConfigError);
}

TEST_CASE("hpc gradients reach the encoder") {
  EncoderConfig ec;
  ec.input_dim = 3;
  ec.bank_kernel_sizes = {1, 3};
  ec.bank_channels = 2;
  ec.projection_channels = 4;
  ec.highway_layers = 1;
  ec.hidden = 4;
  Rng rng(11);
  Encoder<float> enc(ec, rng);
  const HpcConfig cfg = config(2, 3);
  CpcHead<float> cpc(cfg, 4, rng);
  ApcHead<float> apc(cfg, 4, rng);
  ParamList<float> params;
  enc.collect(params);
  for (auto* p : params) p->zero_grad();
  Graph<float> g;
  Rng unused(0), neg(3);
  auto z = enc.encode(g, g.constant(testing::random32(12, {16, 3})), Mode::Streaming, false, unused);
  g.backward(hpc_loss(g, cpc, apc, z.latent, cfg, neg).total);
  double norm = 0.0;
  for (auto* p : params)
    for (float v : p->grad.data()) norm += std::abs(v);
  CHECK(norm > 0.0);
}

TEST_CASE("aggregation is causal") {
  Rng rng(13);
  CpcHead<float> head(config(2, 3), 4, rng);
  Tensor z = testing::random32(14, {10, 4});
  Graph<float> g(false);
  const Tensor a = head.gnet.forward(g, g.constant(z)).value();
  z(6, 1) += 1.0f;
  const Tensor b = head.gnet.forward(g, g.constant(z)).value();
  CHECK(a.slice_rows(0, 6) == b.slice_rows(0, 6));
}

TEST_CASE("hpc loss is deterministic") {
  Rng init(15);
  const HpcConfig cfg = config(3, 4);
  CpcHead<float> cpc(cfg, 4, init);
  ApcHead<float> apc(cfg, 4, init);
  const Tensor z = testing::random32(16, {14, 4});
  Graph<float> g(false);
  Rng a(8), b(8);
  CHECK(hpc_loss(g, cpc, apc, g.constant(z), cfg, a).total.value() ==
        hpc_loss(g, cpc, apc, g.constant(z), cfg, b).total.value());
}
