// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dualvc/tensor.hpp"

namespace dualvc {

/// Which part of the model a parameter belongs to. The optimizer scales its
/// step per group and gradient noise targets the autoregressive group only.
enum class ParamGroup { Shared, Causal, NonCausal, Autoregressive, Predictive };

const char* to_string(ParamGroup g);

/// A trainable tensor with a gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::Shared;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, ParamGroup g, BasicTensor<T> v)
      : name(std::move(n)), group(g), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = BasicTensor<T>(value.shape());
    std::fill(grad.storage().begin(), grad.storage().end(), T(0));
  }
};

template <typename T>
class Graph;

/// Handle to a value recorded in a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph->requires_grad(*this); }
};

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so walking the tape backwards is a
/// valid topological order. A node only stores a backward closure when one of
/// its inputs requires a gradient; constants and detached values cut the
/// graph. With recording disabled the graph evaluates values only.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(BasicTensor<T> value) { return push("constant", std::move(value), false, {}); }

  Var<T> param(Parameter<T>& p) {
    Var<T> v = push(p.name, p.value, record_, {});
    if (record_) nodes_[v.id].param = &p;
    return v;
  }

  /// Appends an operation result. `backward` runs only if some parent needs a
  /// gradient.
  Var<T> record(const char* op, BasicTensor<T> value, std::initializer_list<Var<T>> parents,
                Backward backward) {
    return record(op, std::move(value), std::vector<Var<T>>(parents), std::move(backward));
  }

  Var<T> record(const char* op, BasicTensor<T> value, const std::vector<Var<T>>& parents,
                Backward backward) {
    if (!value.all_finite())
      throw NonFiniteError(std::string("non-finite values produced by '") + op + "' " +
                           shape_str(value.shape()));
    bool needs = false;
    if (record_)
      for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    Var<T> v = push(op, std::move(value), needs, {});
    if (needs) nodes_[v.id].backward = std::move(backward);
    return v;
  }

  /// Stop-gradient node. With capture enabled the value is remembered in
  /// call order; with frozen values set, the i-th detach returns the i-th
  /// frozen tensor instead of its input. Replaying frozen values turns every
  /// detached subexpression into a constant of the surrounding function.
  Var<T> detached(Var<T> x) {
    const std::size_t i = detach_calls_++;
    if (i < frozen_.size()) {
      if (frozen_[i].shape() != value(x).shape()) throw ContractError("frozen detach value has the wrong shape");
      return push("detach", frozen_[i], false, {});
    }
    if (capture_) captured_.push_back(value(x));
    return push("detach", value(x), false, {});
  }
  void capture_detached() { capture_ = true; }
  const std::vector<BasicTensor<T>>& captured_detached() const { return captured_; }
  void freeze_detached(std::vector<BasicTensor<T>> values) { frozen_ = std::move(values); }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  const std::string& op_name(Var<T> v) const { return nodes_[v.id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated on first use.
  BasicTensor<T>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
    return n.grad;
  }
  BasicTensor<T>& grad(Var<T> v) { return grad(v.id); }
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }
  const BasicTensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  /// Parameter leaves add their gradient into Parameter::grad.
  void backward(Var<T> loss) {
    if (value(loss).size() != 1) throw ContractError("backward requires a scalar output");
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& dst = n.param->grad;
        if (dst.shape() != n.value.shape()) n.param->zero_grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
      }
    }
  }

 private:
  struct Node {
    std::string op;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(const char* op, BasicTensor<T> value, bool needs, Backward bw) {
    nodes_.push_back(Node{op, std::move(value), {}, needs, std::move(bw), nullptr});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }
  Var<T> push(const std::string& op, BasicTensor<T> value, bool needs, Backward bw) {
    return push(op.c_str(), std::move(value), needs, std::move(bw));
  }

  bool record_;
  std::deque<Node> nodes_;
  bool capture_ = false;
  std::size_t detach_calls_ = 0;
  std::vector<BasicTensor<T>> captured_, frozen_;
};

}  // namespace dualvc
