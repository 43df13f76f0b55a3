// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualvc/graph.hpp"
#include "dualvc/ops.hpp"
#include "dualvc/rng.hpp"

namespace dualvc {

/// Inference mode. Streaming selects the causal branch of every dual-mode
/// block; NonStreaming selects the branch that may look ahead.
enum class Mode { Streaming, NonStreaming };

inline const char* to_string(Mode m) {
  return m == Mode::Streaming ? "streaming" : "non-streaming";
}

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

namespace detail {

template <typename T>
BasicTensor<T> init_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return seeded_uniform<T>(rng, shape, -bound, bound);
}

}  // namespace detail

/// Zero-padding split for a length-preserving convolution of width k.
struct Padding {
  std::size_t left = 0;
  std::size_t right = 0;

  /// Causal: all k-1 frames on the left. Otherwise ceil((k-1)/2) left and
  /// floor((k-1)/2) right.
  static Padding for_kernel(std::size_t k, bool causal) {
    if (causal) return {k - 1, 0};
    return {k / 2, (k - 1) / 2};
  }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, ParamGroup group, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true)
      : weight(name + ".weight", group, detail::init_uniform<T>(rng, {out, in}, in)),
        has_bias(bias) {
    if (bias) this->bias = Parameter<T>(name + ".bias", group, detail::init_uniform<T>(rng, {out}, in));
  }

  Var<T> forward(Graph<T>& g, Var<T> x) {
    Var<T> w = g.param(weight);
    if (!has_bias) return ops::linear(x, w);
    Var<T> b = g.param(bias);
    return ops::linear(x, w, b);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }

  std::size_t in_dim() const { return weight.value.dim(1); }
  std::size_t out_dim() const { return weight.value.dim(0); }

  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = true;
};

/// Length-preserving 1-D convolution: kernel [Cout x Cin x k], bias [Cout].
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, ParamGroup group, std::size_t cin, std::size_t cout,
         std::size_t k, bool causal, Rng& rng)
      : kernel(name + ".kernel", group, detail::init_uniform<T>(rng, {cout, cin, k}, cin * k)),
        bias(name + ".bias", group, detail::init_uniform<T>(rng, {cout}, cin * k)),
        causal(causal) {}

  std::size_t kernel_size() const { return kernel.value.dim(2); }
  Padding padding() const { return Padding::for_kernel(kernel_size(), causal); }

  Var<T> forward(Graph<T>& g, Var<T> x) {
    const Padding p = padding();
    return ops::conv1d(x, g.param(kernel), g.param(bias), p.left, p.right);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&kernel);
    out.push_back(&bias);
  }

  Parameter<T> kernel;
  Parameter<T> bias;
  bool causal = true;
};

/// One filter per channel: kernel [C x k], bias [C].
template <typename T>
class DepthwiseConv1d {
 public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(const std::string& name, ParamGroup group, std::size_t channels, std::size_t k,
                  bool causal, Rng& rng)
      : kernel(name + ".kernel", group, detail::init_uniform<T>(rng, {channels, k}, k)),
        bias(name + ".bias", group, detail::init_uniform<T>(rng, {channels}, k)),
        causal(causal) {}

  std::size_t kernel_size() const { return kernel.value.dim(1); }
  Padding padding() const { return Padding::for_kernel(kernel_size(), causal); }

  Var<T> forward(Graph<T>& g, Var<T> x) {
    const Padding p = padding();
    return ops::depthwise_conv1d(x, g.param(kernel), g.param(bias), p.left, p.right);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&kernel);
    out.push_back(&bias);
  }

  Parameter<T> kernel;
  Parameter<T> bias;
  bool causal = true;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, ParamGroup group, std::size_t channels)
      : gamma(name + ".gamma", group, BasicTensor<T>({channels}, T(1))),
        beta(name + ".beta", group, BasicTensor<T>({channels}, T(0))) {}

  Var<T> forward(Graph<T>& g, Var<T> x) { return ops::layer_norm(x, g.param(gamma), g.param(beta)); }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Parameter<T> gamma;
  Parameter<T> beta;
};

/// Depthwise-separable convolution unit:
/// pointwise -> ReLU -> depthwise -> ReLU -> pointwise -> layer norm -> dropout.
template <typename T>
class BasicConvLayer {
 public:
  BasicConvLayer() = default;
  BasicConvLayer(const std::string& name, ParamGroup group, std::size_t cin, std::size_t cout,
                 std::size_t k, bool causal, double dropout_rate, Rng& rng)
      : pointwise_in(name + ".pointwise_in", group, cin, cout, 1, causal, rng),
        depthwise(name + ".depthwise", group, cout, k, causal, rng),
        pointwise_out(name + ".pointwise_out", group, cout, cout, 1, causal, rng),
        norm(name + ".norm", group, cout),
        dropout_rate(dropout_rate) {
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout rate must be in [0, 1)");
  }

  bool causal() const { return depthwise.causal; }
  std::size_t in_channels() const { return pointwise_in.kernel.value.dim(1); }
  std::size_t out_channels() const { return pointwise_out.kernel.value.dim(0); }
  std::size_t kernel_size() const { return depthwise.kernel_size(); }
  /// Frames of history one output frame needs.
  std::size_t left_context() const { return depthwise.padding().left; }

  Var<T> forward(Graph<T>& g, Var<T> x, bool training, Rng& rng) {
    if (dropout_rate >= 1.0) throw ConfigError("dropout rate must be below 1");
    Var<T> h = ops::relu(pointwise_in.forward(g, x));
    h = ops::relu(depthwise.forward(g, h));
    h = norm.forward(g, pointwise_out.forward(g, h));
    if (training) h = ops::dropout(h, dropout_rate, rng);
    return h;
  }

  void collect(ParamList<T>& out) {
    pointwise_in.collect(out);
    depthwise.collect(out);
    pointwise_out.collect(out);
    norm.collect(out);
  }

  Conv1d<T> pointwise_in;
  DepthwiseConv1d<T> depthwise;
  Conv1d<T> pointwise_out;
  LayerNorm<T> norm;
  double dropout_rate = 0.1;
};

/// Two independent basic conv layers; the mode picks which one runs.
template <typename T>
class DualModeConvBlock {
 public:
  DualModeConvBlock() = default;
  DualModeConvBlock(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    double dropout_rate, Rng& rng)
      : causal_branch(name + ".causal", ParamGroup::Causal, cin, cout, k, true, dropout_rate, rng),
        noncausal_branch(name + ".noncausal", ParamGroup::NonCausal, cin, cout, k, false,
                         dropout_rate, rng) {}

  BasicConvLayer<T>& branch(Mode mode) {
    return mode == Mode::Streaming ? causal_branch : noncausal_branch;
  }

  Var<T> forward(Graph<T>& g, Var<T> x, Mode mode, bool training, Rng& rng) {
    return branch(mode).forward(g, x, training, rng);
  }

  void collect(ParamList<T>& out) {
    causal_branch.collect(out);
    noncausal_branch.collect(out);
  }

  BasicConvLayer<T> causal_branch;
  BasicConvLayer<T> noncausal_branch;
};

/// Unidirectional GRU; gate layout [reset; update; candidate].
template <typename T>
class GruLayer {
 public:
  GruLayer() = default;
  GruLayer(const std::string& name, ParamGroup group, std::size_t input, std::size_t hidden, Rng& rng)
      : w_ih(name + ".w_ih", group, detail::init_uniform<T>(rng, {3 * hidden, input}, hidden)),
        w_hh(name + ".w_hh", group, detail::init_uniform<T>(rng, {3 * hidden, hidden}, hidden)),
        b_ih(name + ".b_ih", group, detail::init_uniform<T>(rng, {3 * hidden}, hidden)),
        b_hh(name + ".b_hh", group, detail::init_uniform<T>(rng, {3 * hidden}, hidden)) {}

  std::size_t hidden() const { return w_hh.value.dim(1); }
  std::size_t input() const { return w_ih.value.dim(1); }

  /// Runs the recurrence over every frame of x starting from h0.
  Var<T> forward(Graph<T>& g, Var<T> x, const BasicTensor<T>& h0) {
    return ops::gru(x, g.constant(h0), g.param(w_ih), g.param(w_hh), g.param(b_ih), g.param(b_hh));
  }
  Var<T> forward(Graph<T>& g, Var<T> x) { return forward(g, x, BasicTensor<T>({hidden()})); }

  /// One recurrence step outside any graph.
  BasicTensor<T> step(const BasicTensor<T>& x_t, const BasicTensor<T>& h_prev) {
    if (x_t.size() != input() || h_prev.size() != hidden())
      throw ShapeError("gru step: expected input " + std::to_string(input()) + " and hidden " +
                       std::to_string(hidden()));
    Graph<T> g(false);
    Var<T> x = g.constant(BasicTensor<T>({1, input()}, x_t.storage()));
    BasicTensor<T> h = forward(g, x, BasicTensor<T>({hidden()}, h_prev.storage())).value();
    return BasicTensor<T>({hidden()}, h.storage());
  }

  void collect(ParamList<T>& out) {
    out.push_back(&w_ih);
    out.push_back(&w_hh);
    out.push_back(&b_ih);
    out.push_back(&b_hh);
  }

  Parameter<T> w_ih;
  Parameter<T> w_hh;
  Parameter<T> b_ih;
  Parameter<T> b_hh;
};

/// y = x + gate * (relu(Wh x) - x), gate = sigmoid(Wt x).
template <typename T>
class Highway {
 public:
  Highway() = default;
  Highway(const std::string& name, ParamGroup group, std::size_t dim, Rng& rng)
      : transform(name + ".transform", group, dim, dim, rng),
        gate(name + ".gate", group, dim, dim, rng) {
    // Start close to the carry path.
    for (auto& v : gate.bias.value.data()) v = T(-1);
  }

  Var<T> forward(Graph<T>& g, Var<T> x) {
    Var<T> h = ops::relu(transform.forward(g, x));
    Var<T> t = ops::sigmoid(gate.forward(g, x));
    return ops::add(x, ops::mul(t, ops::sub(h, x)));
  }

  void collect(ParamList<T>& out) {
    transform.collect(out);
    gate.collect(out);
  }

  Linear<T> transform;
  Linear<T> gate;
};

/// Copies parameter values between two identically structured lists.
template <typename Dst, typename Src>
void copy_parameter_values(const ParamList<Dst>& dst, const ParamList<Src>& src) {
  if (dst.size() != src.size()) throw ContractError("parameter lists differ in length");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->value.shape() != src[i]->value.shape())
      throw ShapeError("parameter '" + dst[i]->name + "' shape mismatch");
    dst[i]->value = src[i]->value.template cast<Dst>();
  }
}

}  // namespace dualvc
