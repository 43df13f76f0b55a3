// SPDX-License-Identifier: Apache-2.0
#include "dualvc/gradsuite.hpp"

#include <functional>

#include "dualvc/gradcheck.hpp"
#include "dualvc/training.hpp"

namespace dualvc {

namespace {

Tensor64 random(std::uint64_t seed, Shape shape, double scale = 1.0) {
  Rng rng(seed);
  return seeded_normal<double>(rng, shape, 0.0, scale);
}

// Projects a matrix output onto fixed random weights to get a scalar.
Var<double> project(Graph<double>& g, Var<double> y, std::uint64_t seed) {
  return ops::mean_all(ops::mul(y, g.constant(random(seed, y.shape()))));
}

class Suite {
 public:
  explicit Suite(double tol) : tol_(tol) {}

  void add(const std::string& name, const std::function<Var<double>(Graph<double>&)>& loss,
           const ParamList<double>& params) {
    const auto r = grad_check_params(loss, params);
    entries_.push_back({name, r.max_rel_error, r.coordinates, r.max_rel_error < tol_});
  }

  template <typename Layer, typename Fwd>
  void layer(const std::string& name, Layer& l, const Tensor64& x, Fwd fwd) {
    ParamList<double> params;
    l.collect(params);
    add(name, [&](Graph<double>& g) { return project(g, fwd(g, g.constant(x)), 99); }, params);
  }

  std::vector<GradSuiteEntry> take() { return std::move(entries_); }

 private:
  double tol_;
  std::vector<GradSuiteEntry> entries_;
};

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(double tolerance) {
  Suite suite(tolerance);
  Rng init(11);
  Rng unused(0);
  const Tensor64 x = random(1, {7, 4});

  Linear<double> lin("linear", ParamGroup::Shared, 4, 3, init);
  suite.layer("linear", lin, x, [&](Graph<double>& g, Var<double> v) { return lin.forward(g, v); });
  Highway<double> hw("highway", ParamGroup::Shared, 4, init);
  suite.layer("highway", hw, x, [&](Graph<double>& g, Var<double> v) { return hw.forward(g, v); });
  GruLayer<double> gru("gru", ParamGroup::Shared, 4, 3, init);
  suite.layer("gru", gru, x, [&](Graph<double>& g, Var<double> v) { return gru.forward(g, v); });
  for (bool causal : {true, false}) {
    BasicConvLayer<double> conv("conv", ParamGroup::Shared, 4, 5, 3, causal, 0.0, init);
    suite.layer(causal ? "basic_conv_causal" : "basic_conv_noncausal", conv, x,
                [&](Graph<double>& g, Var<double> v) { return conv.forward(g, v, false, unused); });
  }
  DualModeConvBlock<double> block("block", 4, 5, 3, 0.0, init);
  for (Mode m : {Mode::Streaming, Mode::NonStreaming})
    suite.layer(std::string("dual_mode_block_") + to_string(m), block, x,
                [&](Graph<double>& g, Var<double> v) { return block.forward(g, v, m, false, unused); });

  const ModelConfig cfg = ModelConfig::tiny();
  DualVcModel<double> model(cfg);
  const std::size_t frames = 8;
  const Tensor64 bnf = random(2, {frames, cfg.encoder.input_dim});
  const Tensor64 target = random(3, {frames, cfg.decoder.output_dim});
  ParamList<double> enc_params, dec_params, all = model.parameters();
  model.encoder.collect(enc_params);
  model.decoder.collect(dec_params);

  for (Mode m : {Mode::Streaming, Mode::NonStreaming})
    suite.add(std::string("encoder_") + to_string(m),
              [&](Graph<double>& g) {
                return project(g, model.encoder.encode(g, g.constant(bnf), m, false, unused).latent, 98);
              },
              enc_params);
  const Tensor64 latent = random(4, {frames, cfg.encoder.hidden});
  for (Mode m : {Mode::Streaming, Mode::NonStreaming})
    suite.add(std::string("decoder_teacher_forced_") + to_string(m),
              [&](Graph<double>& g) {
                return project(g, model.decoder.teacher_forced(g, g.constant(latent), 1, target, m, false,
                                                               unused, 0.0),
                               97);
              },
              dec_params);

  suite.add("distillation_loss",
            [&](Graph<double>& g) {
              auto zs = model.encoder.encode(g, g.constant(bnf), Mode::Streaming, false, unused);
              auto zn = model.encoder.encode(g, g.constant(bnf), Mode::NonStreaming, false, unused);
              return distillation_loss(zs, zn);
            },
            enc_params);
  ParamList<double> cpc_params, apc_params;
  model.cpc.collect(cpc_params);
  model.apc.collect(apc_params);
  for (auto* p : enc_params) {
    cpc_params.push_back(p);
    apc_params.push_back(p);
  }
  auto latent_of = [&](Graph<double>& g) {
    return model.encoder.encode(g, g.constant(bnf), Mode::Streaming, false, unused).latent;
  };
  suite.add("cpc_loss",
            [&](Graph<double>& g) {
              Rng rng(5);
              return cpc_loss(g, model.cpc, latent_of(g), cfg.hpc.negatives, rng, cfg.hpc.cpc_detach_candidates);
            },
            cpc_params);
  suite.add("apc_loss", [&](Graph<double>& g) { return apc_loss(g, model.apc, latent_of(g), cfg.hpc.apc_detach_targets); },
            apc_params);
  suite.add("hpc_loss",
            [&](Graph<double>& g) {
              Rng rng(6);
              return hpc_loss(g, model.cpc, model.apc, latent_of(g), cfg.hpc, rng).total;
            },
            all);
  suite.add("reconstruction_loss",
            [&](Graph<double>& g) {
              Var<double> z = latent_of(g);
              Var<double> y = model.decoder.teacher_forced(g, z, 0, target, Mode::Streaming, false, unused, 0.0);
              return reconstruction_loss(g.constant(target), y);
            },
            all);
  suite.add("joint_training_loss",
            [&](Graph<double>& g) {
              Rng rng(7);
              return combine_losses(example_losses(g, model, bnf, 1, target, true, rng, 0.5), 1.0, 1.0, 1.0);
            },
            all);
  return suite.take();
}

}  // namespace dualvc
