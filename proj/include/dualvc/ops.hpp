// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable operations on Graph values.
//
// Sequence tensors are [frames x channels]. Every kernel computes each output
// frame with a fixed summation order that does not depend on how many frames
// are in the input, so evaluating a sequence in pieces (with the right left
// context) reproduces the full evaluation bit for bit.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dualvc/graph.hpp"
#include "dualvc/rng.hpp"

namespace dualvc::ops {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
BasicTensor<T> transpose2d(const BasicTensor<T>& w, std::size_t rows, std::size_t cols) {
  BasicTensor<T> out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = w[r * cols + c];
  return out;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    for (Var<T> p : {a, b}) {
      if (!g.requires_grad(p.id)) continue;
      auto& gp = g.grad(p);
      for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph->record("sub", std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a.id)) {
      auto& ga = g.grad(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(b.id)) {
      auto& gb = g.grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a.id)) {
      auto& ga = g.grad(a);
      const auto& bv = g.value(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(b.id)) {
      auto& gb = g.grad(b);
      const auto& av = g.value(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.graph->record("scale", std::move(out), {a}, [a, s](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return x.graph->record("relu", std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (y[i] > T(0)) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = detail::sigmoid(v);
  return x.graph->record("sigmoid", std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return x.graph->record("tanh", std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
  });
}

/// Identity in the forward pass; no gradient flows back through it.
template <typename T>
Var<T> detach(Var<T> x) {
  return x.graph->detached(x);
}

/// Inverted dropout. Identity when `rate` is zero.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.value().size());
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  BasicTensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.graph->record("dropout", std::move(out), {x},
                         [x, mask = std::move(mask)](Graph<T>& g, int self) {
                           const auto& gy = g.grad(self);
                           auto& gx = g.grad(x);
                           for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                         });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rows() == rows, "concat_cols: row mismatch");
    cols += p.value().cols();
  }
  BasicTensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.row(r).begin(), c, out.row(r).begin() + off);
    off += c;
  }
  return parts[0].graph->record("concat_cols", std::move(out), parts,
                                [parts](Graph<T>& g, int self) {
                                  const auto& gy = g.grad(self);
                                  const std::size_t rows = gy.rows();
                                  std::size_t off = 0;
                                  for (const auto& p : parts) {
                                    const std::size_t c = g.value(p.id).cols();
                                    if (g.requires_grad(p.id)) {
                                      auto& gp = g.grad(p);
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t k = 0; k < c; ++k)
                                          gp(r, k) += gy(r, off + k);
                                    }
                                    off += c;
                                  }
                                });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  std::vector<BasicTensor<T>> values;
  for (const auto& p : parts) values.push_back(p.value());
  BasicTensor<T> out = dualvc::concat_rows(values);
  return parts.at(0).graph->record(
      "concat_rows", std::move(out), parts, [parts](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        std::size_t off = 0;
        for (const auto& p : parts) {
          const std::size_t n = g.value(p.id).size();
          if (g.requires_grad(p.id)) {
            auto& gp = g.grad(p);
            for (std::size_t i = 0; i < n; ++i) gp[i] += gy[off + i];
          }
          off += n;
        }
      });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  BasicTensor<T> out = x.value().slice_rows(begin, end);
  return x.graph->record("slice_rows", std::move(out), {x}, [x, begin](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(x);
    const std::size_t off = begin * gx.cols();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
  });
}

/// Repeats row `index` of `table` [S x E] `count` times.
template <typename T>
Var<T> repeat_row(Var<T> table, std::size_t index, std::size_t count) {
  const auto& tv = table.value();
  if (index >= tv.rows()) throw ArgumentError("repeat_row: index out of range");
  const std::size_t e = tv.cols();
  BasicTensor<T> out({count, e});
  for (std::size_t r = 0; r < count; ++r) std::copy_n(tv.row(index).begin(), e, out.row(r).begin());
  return table.graph->record("repeat_row", std::move(out), {table},
                             [table, index](Graph<T>& g, int self) {
                               const auto& gy = g.grad(self);
                               auto& gt = g.grad(table);
                               const std::size_t e = gy.cols();
                               for (std::size_t r = 0; r < gy.rows(); ++r)
                                 for (std::size_t k = 0; k < e; ++k) gt(index, k) += gy(r, k);
                             });
}

// ---------------------------------------------------------------------------
// Dense

/// y = x W^T + b for x [T x I], W [O x I], b [O] (b may be absent).
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, const Var<T>* b = nullptr) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  detail::require(wv.rank() == 2, "linear: weight must be 2-D");
  const std::size_t rows = xv.rows(), in = xv.cols(), out_dim = wv.dim(0);
  detail::require(wv.dim(1) == in, "linear: input width mismatch");
  if (b) detail::require(b->value().size() == out_dim, "linear: bias size mismatch");
  const BasicTensor<T> wt = detail::transpose2d(wv, out_dim, in);
  BasicTensor<T> out({rows, out_dim});
  for (std::size_t t = 0; t < rows; ++t) {
    T* acc = &out[t * out_dim];
    if (b) std::copy_n(b->value().data().begin(), out_dim, acc);
    const T* xr = &xv[t * in];
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      const T* wr = &wt[i * out_dim];
      for (std::size_t o = 0; o < out_dim; ++o) acc[o] += xi * wr[o];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  const bool has_bias = b != nullptr;
  return x.graph->record("linear", std::move(out), parents,
                         [parents, has_bias](Graph<T>& g, int self) {
                           const auto& gy = g.grad(self);
                           const Var<T> x = parents[0], w = parents[1];
                           const auto& xv = g.value(x.id);
                           const auto& wv = g.value(w.id);
                           const std::size_t rows = xv.rows(), in = xv.cols(), out_dim = wv.dim(0);
                           if (g.requires_grad(x.id)) {
                             auto& gx = g.grad(x);
                             for (std::size_t t = 0; t < rows; ++t)
                               for (std::size_t o = 0; o < out_dim; ++o) {
                                 const T go = gy[t * out_dim + o];
                                 const T* wr = &wv[o * in];
                                 T* gr = &gx[t * in];
                                 for (std::size_t i = 0; i < in; ++i) gr[i] += go * wr[i];
                               }
                           }
                           if (g.requires_grad(w.id)) {
                             auto& gw = g.grad(w);
                             for (std::size_t t = 0; t < rows; ++t)
                               for (std::size_t o = 0; o < out_dim; ++o) {
                                 const T go = gy[t * out_dim + o];
                                 const T* xr = &xv[t * in];
                                 T* gr = &gw[o * in];
                                 for (std::size_t i = 0; i < in; ++i) gr[i] += go * xr[i];
                               }
                           }
                           if (has_bias && g.requires_grad(parents[2].id)) {
                             auto& gb = g.grad(parents[2]);
                             for (std::size_t t = 0; t < rows; ++t)
                               for (std::size_t o = 0; o < out_dim; ++o) gb[o] += gy[t * out_dim + o];
                           }
                         });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return linear(x, w, &b);
}

// ---------------------------------------------------------------------------
// Temporal

/// Full 1-D convolution along time. x [T x Cin], w [Cout x Cin x k], b [Cout].
/// Output frame t reads input frames t - left_pad + j for taps j = 0..k-1;
/// frames outside [0, T) are zero. Requires left_pad + right_pad == k - 1.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t left_pad, std::size_t right_pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  detail::require(wv.rank() == 3, "conv1d: kernel must be [Cout x Cin x k]");
  const std::size_t frames = xv.rows(), cin = xv.cols();
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin)
    throw ShapeError("conv1d: input has " + std::to_string(cin) + " channels, kernel expects " +
                     std::to_string(wv.dim(1)));
  detail::require(b.value().size() == cout, "conv1d: bias size mismatch");
  detail::require(left_pad + right_pad + 1 == k, "conv1d: padding must total k - 1");
  // Per-tap transposed kernels [k][Cin][Cout].
  std::vector<T> taps(k * cin * cout);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t j = 0; j < k; ++j) taps[(j * cin + ci) * cout + co] = wv[(co * cin + ci) * k + j];
  BasicTensor<T> out({frames, cout});
  const auto lp = static_cast<std::ptrdiff_t>(left_pad);
  for (std::size_t t = 0; t < frames; ++t) {
    T* acc = &out[t * cout];
    std::copy_n(b.value().data().begin(), cout, acc);
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - lp + static_cast<std::ptrdiff_t>(j);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      const T* xr = &xv[static_cast<std::size_t>(src) * cin];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T xi = xr[ci];
        const T* wr = &taps[(j * cin + ci) * cout];
        for (std::size_t co = 0; co < cout; ++co) acc[co] += xi * wr[co];
      }
    }
  }
  return x.graph->record(
      "conv1d", std::move(out), {x, w, b}, [x, w, b, left_pad](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        const auto& xv = g.value(x.id);
        const auto& wv = g.value(w.id);
        const std::size_t frames = xv.rows(), cin = xv.cols();
        const std::size_t cout = wv.dim(0), k = wv.dim(2);
        const auto lp = static_cast<std::ptrdiff_t>(left_pad);
        const bool gx_on = g.requires_grad(x.id), gw_on = g.requires_grad(w.id);
        BasicTensor<T>* gx = gx_on ? &g.grad(x) : nullptr;
        BasicTensor<T>* gw = gw_on ? &g.grad(w) : nullptr;
        for (std::size_t t = 0; t < frames; ++t) {
          const T* go = &gy[t * cout];
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - lp + static_cast<std::ptrdiff_t>(j);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t co = 0; co < cout; ++co) {
              const T gco = go[co];
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t wi = (co * cin + ci) * k + j;
                if (gx) (*gx)[s * cin + ci] += gco * wv[wi];
                if (gw) (*gw)[wi] += gco * xv[s * cin + ci];
              }
            }
          }
        }
        if (g.requires_grad(b.id)) {
          auto& gb = g.grad(b);
          for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[t * cout + co];
        }
      });
}

/// Channel-wise convolution. x [T x C], w [C x k], b [C]; padding as conv1d.
template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t left_pad, std::size_t right_pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const std::size_t frames = xv.rows(), ch = xv.cols();
  detail::require(wv.rank() == 2 && wv.dim(0) == ch, "depthwise_conv1d: kernel must be [C x k]");
  const std::size_t k = wv.dim(1);
  detail::require(b.value().size() == ch, "depthwise_conv1d: bias size mismatch");
  detail::require(left_pad + right_pad + 1 == k, "depthwise_conv1d: padding must total k - 1");
  const BasicTensor<T> wt = detail::transpose2d(wv, ch, k);  // [k x C]
  BasicTensor<T> out({frames, ch});
  const auto lp = static_cast<std::ptrdiff_t>(left_pad);
  for (std::size_t t = 0; t < frames; ++t) {
    T* acc = &out[t * ch];
    std::copy_n(b.value().data().begin(), ch, acc);
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - lp + static_cast<std::ptrdiff_t>(j);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      const T* xr = &xv[static_cast<std::size_t>(src) * ch];
      const T* wr = &wt[j * ch];
      for (std::size_t c = 0; c < ch; ++c) acc[c] += xr[c] * wr[c];
    }
  }
  return x.graph->record(
      "depthwise_conv1d", std::move(out), {x, w, b}, [x, w, b, left_pad](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        const auto& xv = g.value(x.id);
        const auto& wv = g.value(w.id);
        const std::size_t frames = xv.rows(), ch = xv.cols(), k = wv.dim(1);
        const auto lp = static_cast<std::ptrdiff_t>(left_pad);
        BasicTensor<T>* gx = g.requires_grad(x.id) ? &g.grad(x) : nullptr;
        BasicTensor<T>* gw = g.requires_grad(w.id) ? &g.grad(w) : nullptr;
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - lp + static_cast<std::ptrdiff_t>(j);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < ch; ++c) {
              const T gc = gy[t * ch + c];
              if (gx) (*gx)[s * ch + c] += gc * wv[c * k + j];
              if (gw) (*gw)[c * k + j] += gc * xv[s * ch + c];
            }
          }
        if (g.requires_grad(b.id)) {
          auto& gb = g.grad(b);
          for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t c = 0; c < ch; ++c) gb[c] += gy[t * ch + c];
        }
      });
}

/// Max over a two-frame window with zero padding: {t-1, t} when causal,
/// {t, t+1} otherwise.
template <typename T>
Var<T> max_pool2(Var<T> x, bool causal) {
  const auto& xv = x.value();
  const std::size_t frames = xv.rows(), ch = xv.cols();
  BasicTensor<T> out({frames, ch});
  // Source frame of each output element; -1 marks the zero pad.
  std::vector<std::ptrdiff_t> arg(frames * ch);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::ptrdiff_t other = causal ? static_cast<std::ptrdiff_t>(t) - 1
                                          : static_cast<std::ptrdiff_t>(t) + 1;
      const T cur = xv[t * ch + c];
      T best = cur;
      std::ptrdiff_t best_src = static_cast<std::ptrdiff_t>(t);
      const bool in_range = other >= 0 && other < static_cast<std::ptrdiff_t>(frames);
      const T neighbour = in_range ? xv[static_cast<std::size_t>(other) * ch + c] : T(0);
      if (neighbour > best) {
        best = neighbour;
        best_src = in_range ? other : -1;
      }
      out[t * ch + c] = best;
      arg[t * ch + c] = best_src;
    }
  return x.graph->record("max_pool2", std::move(out), {x},
                         [x, arg = std::move(arg)](Graph<T>& g, int self) {
                           const auto& gy = g.grad(self);
                           auto& gx = g.grad(x);
                           const std::size_t ch = gx.cols();
                           for (std::size_t i = 0; i < gy.size(); ++i)
                             if (arg[i] >= 0) gx[static_cast<std::size_t>(arg[i]) * ch + i % ch] += gy[i];
                         });
}

/// Per-frame normalization over channels, then gain and offset.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t frames = xv.rows(), ch = xv.cols();
  detail::require(gamma.value().size() == ch && beta.value().size() == ch,
                  "layer_norm: parameter size mismatch");
  BasicTensor<T> xhat({frames, ch});
  std::vector<T> inv_std(frames);
  BasicTensor<T> out({frames, ch});
  for (std::size_t t = 0; t < frames; ++t) {
    T mean = 0;
    for (std::size_t c = 0; c < ch; ++c) mean += xv[t * ch + c];
    mean /= static_cast<T>(ch);
    T var = 0;
    for (std::size_t c = 0; c < ch; ++c) {
      const T d = xv[t * ch + c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(ch);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[t] = is;
    for (std::size_t c = 0; c < ch; ++c) {
      const T h = (xv[t * ch + c] - mean) * is;
      xhat[t * ch + c] = h;
      out[t * ch + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return x.graph->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        const std::size_t frames = xhat.rows(), ch = xhat.cols();
        const auto& gam = g.value(gamma.id);
        if (g.requires_grad(gamma.id)) {
          auto& gg = g.grad(gamma);
          for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t c = 0; c < ch; ++c) gg[c] += gy[t * ch + c] * xhat[t * ch + c];
        }
        if (g.requires_grad(beta.id)) {
          auto& gb = g.grad(beta);
          for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t c = 0; c < ch; ++c) gb[c] += gy[t * ch + c];
        }
        if (g.requires_grad(x.id)) {
          auto& gx = g.grad(x);
          std::vector<T> dh(ch);
          for (std::size_t t = 0; t < frames; ++t) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < ch; ++c) {
              dh[c] = gy[t * ch + c] * gam[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * xhat[t * ch + c];
            }
            mean_dh /= static_cast<T>(ch);
            mean_dh_h /= static_cast<T>(ch);
            for (std::size_t c = 0; c < ch; ++c)
              gx[t * ch + c] += inv_std[t] * (dh[c] - mean_dh - xhat[t * ch + c] * mean_dh_h);
          }
        }
      });
}

/// Unidirectional GRU over a sequence, starting from hidden state `h0` [H].
/// Gate rows are stacked [reset; update; candidate]:
///   r = s(Wr x + br + Ur h + cr)        z = s(Wz x + bz + Uz h + cz)
///   n = tanh(Wn x + bn + r * (Un h + cn))   h' = (1 - z) * n + z * h
/// x [T x I], w_ih [3H x I], w_hh [3H x H], b_ih [3H], b_hh [3H] -> [T x H].
template <typename T>
Var<T> gru(Var<T> x, Var<T> h0, Var<T> w_ih, Var<T> w_hh, Var<T> b_ih, Var<T> b_hh) {
  const auto& hv0 = h0.value();
  const std::size_t hidden = hv0.size();
  const auto& whh = w_hh.value();
  detail::require(w_ih.value().rank() == 2 && w_ih.value().dim(0) == 3 * hidden,
                  "gru: input weight must be [3H x I]");
  detail::require(whh.rank() == 2 && whh.dim(0) == 3 * hidden && whh.dim(1) == hidden,
                  "gru: recurrent weight must be [3H x H]");
  if (x.value().cols() != w_ih.value().dim(1))
    throw ShapeError("gru: input width " + std::to_string(x.value().cols()) + " != " +
                     std::to_string(w_ih.value().dim(1)));
  detail::require(b_hh.value().size() == 3 * hidden, "gru: bias size mismatch");

  Graph<T>& graph = *x.graph;
  // Input projections for all frames at once; row-wise, so chunking is exact.
  Var<T> gi_var = linear(x, w_ih, b_ih);
  const auto& gi = gi_var.value();
  const std::size_t frames = gi.rows(), g3 = 3 * hidden;
  const BasicTensor<T> whh_t = detail::transpose2d(whh, g3, hidden);  // [H x 3H]

  BasicTensor<T> out({frames, hidden});
  // Saved per step: r, z, n, (Un h + cn).
  std::vector<T> saved(frames * 4 * hidden);
  std::vector<T> h(hv0.data().begin(), hv0.data().end());
  std::vector<T> gh(g3);
  const auto& bhh = b_hh.value();
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy_n(bhh.data().begin(), g3, gh.begin());
    for (std::size_t j = 0; j < hidden; ++j) {
      const T hj = h[j];
      const T* wr = &whh_t[j * g3];
      for (std::size_t o = 0; o < g3; ++o) gh[o] += hj * wr[o];
    }
    const T* git = &gi[t * g3];
    T* sv = &saved[t * 4 * hidden];
    for (std::size_t u = 0; u < hidden; ++u) {
      const T r = detail::sigmoid(git[u] + gh[u]);
      const T z = detail::sigmoid(git[hidden + u] + gh[hidden + u]);
      const T n = std::tanh(git[2 * hidden + u] + r * gh[2 * hidden + u]);
      const T hn = (T(1) - z) * n + z * h[u];
      sv[u] = r;
      sv[hidden + u] = z;
      sv[2 * hidden + u] = n;
      sv[3 * hidden + u] = gh[2 * hidden + u];
      out[t * hidden + u] = hn;
    }
    std::copy_n(&out[t * hidden], hidden, h.begin());
  }

  return graph.record(
      "gru", std::move(out), {gi_var, h0, w_hh, b_hh},
      [gi_var, h0, w_hh, b_hh, saved = std::move(saved)](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        const auto& y = g.value(self);
        const auto& hv0 = g.value(h0.id);
        const auto& whh = g.value(w_hh.id);
        const std::size_t hidden = hv0.size(), g3 = 3 * hidden, frames = y.rows();
        const bool need_gi = g.requires_grad(gi_var.id);
        BasicTensor<T>* ggi = need_gi ? &g.grad(gi_var) : nullptr;
        BasicTensor<T>* gwhh = g.requires_grad(w_hh.id) ? &g.grad(w_hh) : nullptr;
        BasicTensor<T>* gbhh = g.requires_grad(b_hh.id) ? &g.grad(b_hh) : nullptr;
        std::vector<T> dh(hidden, T(0)), dh_prev(hidden), dgi(g3), dgh(g3);
        for (std::size_t tt = frames; tt-- > 0;) {
          const T* sv = &saved[tt * 4 * hidden];
          const T* hp = tt == 0 ? hv0.data().data() : &y[(tt - 1) * hidden];
          for (std::size_t u = 0; u < hidden; ++u) dh[u] += gy[tt * hidden + u];
          for (std::size_t u = 0; u < hidden; ++u) {
            const T r = sv[u], z = sv[hidden + u], n = sv[2 * hidden + u], hn = sv[3 * hidden + u];
            const T dn = dh[u] * (T(1) - z);
            const T dz = dh[u] * (hp[u] - n);
            dh_prev[u] = dh[u] * z;
            const T dn_pre = dn * (T(1) - n * n);
            const T dr_pre = dn_pre * hn * r * (T(1) - r);
            const T dz_pre = dz * z * (T(1) - z);
            dgi[u] = dr_pre;
            dgi[hidden + u] = dz_pre;
            dgi[2 * hidden + u] = dn_pre;
            dgh[u] = dr_pre;
            dgh[hidden + u] = dz_pre;
            dgh[2 * hidden + u] = dn_pre * r;
          }
          if (ggi)
            for (std::size_t o = 0; o < g3; ++o) (*ggi)[tt * g3 + o] += dgi[o];
          for (std::size_t o = 0; o < g3; ++o) {
            const T d = dgh[o];
            const T* wr = &whh[o * hidden];
            for (std::size_t j = 0; j < hidden; ++j) dh_prev[j] += d * wr[j];
            if (gwhh) {
              T* gr = &(*gwhh)[o * hidden];
              for (std::size_t j = 0; j < hidden; ++j) gr[j] += d * hp[j];
            }
            if (gbhh) (*gbhh)[o] += d;
          }
          dh.swap(dh_prev);
        }
        if (g.requires_grad(h0.id)) {
          auto& gh0 = g.grad(h0);
          for (std::size_t u = 0; u < hidden; ++u) gh0[u] += dh[u];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses (all return a [1] tensor)

template <typename T>
Var<T> mean_all(Var<T> x) {
  const auto& xv = x.value();
  T s = 0;
  for (T v : xv.data()) s += v;
  const T n = static_cast<T>(xv.size());
  return x.graph->record("mean_all", BasicTensor<T>({1}, std::vector<T>{s / n}), {x},
                         [x, n](Graph<T>& g, int self) {
                           const T gs = g.grad(self)[0] / n;
                           auto& gx = g.grad(x);
                           for (auto& v : gx.data()) v += gs;
                         });
}

/// Mean of an elementwise penalty on (a - b). `value(d)` and `slope(d)` give
/// the penalty and its derivative.
template <typename T, typename Value, typename Slope>
Var<T> mean_penalty(const char* name, Var<T> a, Var<T> b, Value value, Slope slope) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += value(av[i] - bv[i]);
  const T n = static_cast<T>(av.size());
  return a.graph->record(name, BasicTensor<T>({1}, std::vector<T>{s / n}), {a, b},
                         [a, b, n, slope](Graph<T>& g, int self) {
                           const T gs = g.grad(self)[0] / n;
                           const auto& av = g.value(a.id);
                           const auto& bv = g.value(b.id);
                           BasicTensor<T>* ga = g.requires_grad(a.id) ? &g.grad(a) : nullptr;
                           BasicTensor<T>* gb = g.requires_grad(b.id) ? &g.grad(b) : nullptr;
                           for (std::size_t i = 0; i < av.size(); ++i) {
                             const T d = gs * slope(av[i] - bv[i]);
                             if (ga) (*ga)[i] += d;
                             if (gb) (*gb)[i] -= d;
                           }
                         });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  return mean_penalty<T>("mse", a, b, [](T d) { return d * d; }, [](T d) { return T(2) * d; });
}

template <typename T>
Var<T> l1(Var<T> a, Var<T> b) {
  return mean_penalty<T>(
      "l1", a, b, [](T d) { return std::abs(d); },
      [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); });
}

/// Smooth L1 with beta = 1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
template <typename T>
Var<T> smooth_l1(Var<T> a, Var<T> b) {
  return mean_penalty<T>(
      "smooth_l1", a, b,
      [](T d) { return std::abs(d) < T(1) ? T(0.5) * d * d : std::abs(d) - T(0.5); },
      [](T d) { return std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1)); });
}

/// scores[n][k] = pred[n] . z[index[n * K + k]] for pred [N x H], z [T x H].
template <typename T>
Var<T> gather_dot(Var<T> pred, Var<T> z, std::vector<std::size_t> index, std::size_t per_row) {
  const auto& pv = pred.value();
  const auto& zv = z.value();
  const std::size_t n_rows = pv.rows(), h = pv.cols();
  detail::require(zv.cols() == h, "gather_dot: width mismatch");
  detail::require(index.size() == n_rows * per_row, "gather_dot: index count mismatch");
  BasicTensor<T> out({n_rows, per_row});
  for (std::size_t n = 0; n < n_rows; ++n)
    for (std::size_t k = 0; k < per_row; ++k) {
      const std::size_t src = index[n * per_row + k];
      if (src >= zv.rows()) throw ArgumentError("gather_dot: index out of range");
      T s = 0;
      for (std::size_t c = 0; c < h; ++c) s += pv[n * h + c] * zv[src * h + c];
      out[n * per_row + k] = s;
    }
  return pred.graph->record(
      "gather_dot", std::move(out), {pred, z},
      [pred, z, index = std::move(index), per_row](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        const auto& pv = g.value(pred.id);
        const auto& zv = g.value(z.id);
        const std::size_t n_rows = pv.rows(), h = pv.cols();
        BasicTensor<T>* gp = g.requires_grad(pred.id) ? &g.grad(pred) : nullptr;
        BasicTensor<T>* gz = g.requires_grad(z.id) ? &g.grad(z) : nullptr;
        for (std::size_t n = 0; n < n_rows; ++n)
          for (std::size_t k = 0; k < per_row; ++k) {
            const std::size_t src = index[n * per_row + k];
            const T d = gy[n * per_row + k];
            for (std::size_t c = 0; c < h; ++c) {
              if (gp) (*gp)[n * h + c] += d * zv[src * h + c];
              if (gz) (*gz)[src * h + c] += d * pv[n * h + c];
            }
          }
      });
}

/// Mean over rows of -log softmax(scores[n])[0]: column 0 holds the positive.
template <typename T>
Var<T> nce_first(Var<T> scores) {
  const auto& sv = scores.value();
  const std::size_t n_rows = sv.rows(), k = sv.cols();
  BasicTensor<T> prob({n_rows, k});
  T total = 0;
  for (std::size_t n = 0; n < n_rows; ++n) {
    T mx = sv[n * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, sv[n * k + j]);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(sv[n * k + j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[n * k + j] = std::exp(sv[n * k + j] - mx) / denom;
    total += std::log(denom) + mx - sv[n * k];
  }
  const T count = static_cast<T>(n_rows);
  return scores.graph->record("nce_first", BasicTensor<T>({1}, std::vector<T>{total / count}),
                              {scores},
                              [scores, prob = std::move(prob), count](Graph<T>& g, int self) {
                                const T gs = g.grad(self)[0] / count;
                                auto& gx = g.grad(scores);
                                const std::size_t k = prob.cols();
                                for (std::size_t i = 0; i < prob.size(); ++i)
                                  gx[i] += gs * (prob[i] - (i % k == 0 ? T(1) : T(0)));
                              });
}

}  // namespace dualvc::ops
