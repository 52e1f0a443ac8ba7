#include "pdpp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdpp {

namespace {

enum BinaryKind { kAdd = 0, kSub = 1, kMul = 2 };

// Visits every output element of a same-rank broadcast, reporting the flat
// offsets into out, a and b.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const int rank = static_cast<int>(out.size());
  std::vector<std::size_t> stride_a(rank), stride_b(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (int d = rank - 1; d >= 0; --d) {
    stride_a[d] = sa[d] == 1 ? 0 : acc_a;
    stride_b[d] = sb[d] == 1 ? 0 : acc_b;
    acc_a *= static_cast<std::size_t>(sa[d]);
    acc_b *= static_cast<std::size_t>(sb[d]);
  }
  std::vector<int> idx(rank, 0);
  const std::size_t n = numel(out);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++idx[d];
      ia += stride_a[d];
      ib += stride_b[d];
      if (idx[d] < out[d]) break;
      ia -= stride_a[d] * static_cast<std::size_t>(out[d]);
      ib -= stride_b[d] * static_cast<std::size_t>(out[d]);
      idx[d] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  require(a.size() == b.size(), ErrorCode::kShapeMismatch,
          "broadcast requires equal rank, got " + shape_str(a) + " and " + shape_str(b));
  Shape out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    require(a[d] == b[d] || a[d] == 1 || b[d] == 1, ErrorCode::kShapeMismatch,
            "cannot broadcast dimension " + std::to_string(d) + ": " + shape_str(a) + " vs " + shape_str(b));
    out[d] = std::max(a[d], b[d]);
  }
  return out;
}

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Column matrix for a 1-d convolution over a whole batch. col is [J][NC] and
// colT is [NC][J], J = Cin*K, NC = B*Lout; padded taps read as zero.
template <class T>
void im2col(const T* x, int batch, int cin, int len, int k, int stride, int pad, int lout, std::vector<T>& col,
            std::vector<T>& colT) {
  const std::size_t J = static_cast<std::size_t>(cin) * k;
  const std::size_t NC = static_cast<std::size_t>(batch) * lout;
  col.assign(J * NC, T(0));
  colT.assign(J * NC, T(0));
  for (int b = 0; b < batch; ++b)
    for (int ci = 0; ci < cin; ++ci)
      for (int kk = 0; kk < k; ++kk) {
        const std::size_t j = static_cast<std::size_t>(ci) * k + kk;
        for (int lo = 0; lo < lout; ++lo) {
          const int li = lo * stride + kk - pad;
          if (li < 0 || li >= len) continue;
          const std::size_t n = static_cast<std::size_t>(b) * lout + lo;
          const T v = x[(static_cast<std::size_t>(b) * cin + ci) * len + li];
          col[j * NC + n] = v;
          colT[n * J + j] = v;
        }
      }
}

// out[b, co, lo] = (sum_j W[co][j] * col[j][n]) + bias[co], accumulated in
// ascending j = ci*K + kk order.
template <class T>
void conv_forward(const std::vector<T>& col, const T* wmat, const T* bias, int batch, int cout, std::size_t J, int lout,
                  T* out) {
  const std::size_t NC = static_cast<std::size_t>(batch) * lout;
  std::vector<T> tmp(NC);
  for (int co = 0; co < cout; ++co) {
    std::fill(tmp.begin(), tmp.end(), T(0));
    const T* wrow = wmat + static_cast<std::size_t>(co) * J;
    for (std::size_t j = 0; j < J; ++j) {
      const T w = wrow[j];
      const T* crow = col.data() + j * NC;
      for (std::size_t n = 0; n < NC; ++n) tmp[n] += w * crow[n];
    }
    const T bv = bias ? bias[co] : T(0);
    for (int b = 0; b < batch; ++b)
      for (int lo = 0; lo < lout; ++lo)
        out[(static_cast<std::size_t>(b) * cout + co) * lout + lo] = tmp[static_cast<std::size_t>(b) * lout + lo] + bv;
  }
}

// Given dout [B, Cout, Lout], accumulates dW [Cout][J], dbias and dcolT [NC][J].
template <class T>
void conv_backward(const std::vector<T>& colT, const T* wmat, const T* dout, int batch, int cout, std::size_t J,
                   int lout, T* dw, T* dbias, std::vector<T>* dcolT) {
  const std::size_t NC = static_cast<std::size_t>(batch) * lout;
  if (dcolT) dcolT->assign(NC * J, T(0));
  for (int b = 0; b < batch; ++b)
    for (int lo = 0; lo < lout; ++lo) {
      const std::size_t n = static_cast<std::size_t>(b) * lout + lo;
      const T* crow = colT.data() + n * J;
      for (int co = 0; co < cout; ++co) {
        const T g = dout[(static_cast<std::size_t>(b) * cout + co) * lout + lo];
        if (dbias) dbias[co] += g;
        if (dw) {
          T* dwrow = dw + static_cast<std::size_t>(co) * J;
          for (std::size_t j = 0; j < J; ++j) dwrow[j] += g * crow[j];
        }
        if (dcolT) {
          const T* wrow = wmat + static_cast<std::size_t>(co) * J;
          T* drow = dcolT->data() + n * J;
          for (std::size_t j = 0; j < J; ++j) drow[j] += g * wrow[j];
        }
      }
    }
}

template <class T>
void col2im(const std::vector<T>& dcolT, int batch, int cin, int len, int k, int stride, int pad, int lout, T* dx) {
  const std::size_t J = static_cast<std::size_t>(cin) * k;
  for (int b = 0; b < batch; ++b)
    for (int lo = 0; lo < lout; ++lo) {
      const std::size_t n = static_cast<std::size_t>(b) * lout + lo;
      for (int ci = 0; ci < cin; ++ci)
        for (int kk = 0; kk < k; ++kk) {
          const int li = lo * stride + kk - pad;
          if (li < 0 || li >= len) continue;
          dx[(static_cast<std::size_t>(b) * cin + ci) * len + li] += dcolT[n * J + static_cast<std::size_t>(ci) * k + kk];
        }
    }
}

}  // namespace

template <class T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  require(v.valid() && v.id < static_cast<int>(nodes_.size()), ErrorCode::kInternal, "invalid graph variable");
  return nodes_[v.id];
}

template <class T>
const ArrayT<T>& Graph<T>::value(Var v) const {
  return node(v).value();
}

template <class T>
ArrayT<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return ArrayT<T>(n.value().shape());
  return n.grad;
}

template <class T>
ArrayT<T>& Graph<T>::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = ArrayT<T>(n.value().shape());
  return n.grad;
}

template <class T>
Var Graph<T>::push(ArrayT<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || needs(in);
  return push_dyn(std::move(value), needs_grad, std::move(fn));
}

template <class T>
Var Graph<T>::push_dyn(ArrayT<T> value, bool needs_grad, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Graph<T>::constant(ArrayT<T> value) {
  return push_dyn(std::move(value), false, nullptr);
}

template <class T>
Var Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var Graph<T>::broadcast_binary(Var a, Var b, int kind) {
  const ArrayT<T>& va = value(a);
  const ArrayT<T>& vb = value(b);
  const Shape out_shape = broadcast_shape(va.shape(), vb.shape());
  ArrayT<T> out(out_shape);
  const T* pa = va.data();
  const T* pb = vb.data();
  T* po = out.data();
  const bool same = va.shape() == vb.shape();
  if (same) {
    const std::size_t n = out.size();
    if (kind == kAdd)
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    else if (kind == kSub)
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    else
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  } else {
    for_each_broadcast(out_shape, va.shape(), vb.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
      po[i] = kind == kAdd ? pa[ia] + pb[ib] : kind == kSub ? pa[ia] - pb[ib] : pa[ia] * pb[ib];
    });
  }
  const int ia_id = a.id, ib_id = b.id;
  return push(std::move(out), {a, b}, [ia_id, ib_id, kind, same, out_shape](Graph& g, int self) {
    const T* go = g.nodes_[self].grad.data();
    const bool need_a = g.nodes_[ia_id].needs_grad;
    const bool need_b = g.nodes_[ib_id].needs_grad;
    const Shape sa = g.nodes_[ia_id].value().shape();
    const Shape sb = g.nodes_[ib_id].value().shape();
    T* da = need_a ? g.grad_ref(ia_id).data() : nullptr;
    T* db = need_b ? g.grad_ref(ib_id).data() : nullptr;
    const T* pa = g.nodes_[ia_id].value().data();
    const T* pb = g.nodes_[ib_id].value().data();
    auto visit = [&](std::size_t i, std::size_t ja, std::size_t jb) {
      const T gi = go[i];
      if (kind == kAdd) {
        if (da) da[ja] += gi;
        if (db) db[jb] += gi;
      } else if (kind == kSub) {
        if (da) da[ja] += gi;
        if (db) db[jb] -= gi;
      } else {
        if (da) da[ja] += gi * pb[jb];
        if (db) db[jb] += gi * pa[ja];
      }
    };
    if (same) {
      const std::size_t n = numel(out_shape);
      for (std::size_t i = 0; i < n; ++i) visit(i, i, i);
    } else {
      for_each_broadcast(out_shape, sa, sb, visit);
    }
  });
}

template <class T>
Var Graph<T>::add(Var a, Var b) {
  return broadcast_binary(a, b, kAdd);
}

template <class T>
Var Graph<T>::sub(Var a, Var b) {
  return broadcast_binary(a, b, kSub);
}

template <class T>
Var Graph<T>::mul(Var a, Var b) {
  return broadcast_binary(a, b, kMul);
}

template <class T>
Var Graph<T>::scale(Var a, T s) {
  ArrayT<T> out = value(a);
  for (auto& v : out.vec()) v *= s;
  const int ia = a.id;
  return push(std::move(out), {a}, [ia, s](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    auto& da = g.grad_ref(ia);
    for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * s;
  });
}

template <class T>
Var Graph<T>::affine_const(Var x, const ArrayT<T>& mask, const ArrayT<T>& fill) {
  const ArrayT<T>& vx = value(x);
  require(mask.shape() == vx.shape() && fill.shape() == vx.shape(), ErrorCode::kShapeMismatch,
          "affine_const mask/fill shape mismatch with " + shape_str(vx.shape()));
  ArrayT<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * mask[i] + fill[i];
  const int ix = x.id;
  return push(std::move(out), {x}, [ix, mask](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * mask[i];
  });
}

template <class T>
Var Graph<T>::mish(Var x) {
  const ArrayT<T>& vx = value(x);
  ArrayT<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * std::tanh(softplus(vx[i]));
  const int ix = x.id;
  return push(std::move(out), {x}, [ix](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& vx = g.nodes_[ix].value();
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const T v = vx[i];
      const T tsp = std::tanh(softplus(v));
      dx[i] += go[i] * (tsp + v * (T(1) - tsp * tsp) * sigmoid(v));
    }
  });
}

template <class T>
Var Graph<T>::silu(Var x) {
  const ArrayT<T>& vx = value(x);
  ArrayT<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * sigmoid(vx[i]);
  const int ix = x.id;
  return push(std::move(out), {x}, [ix](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& vx = g.nodes_[ix].value();
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const T s = sigmoid(vx[i]);
      dx[i] += go[i] * s * (T(1) + vx[i] * (T(1) - s));
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

template <class T>
Var Graph<T>::conv1d(Var x, Var w, Var b, int stride, int padding) {
  const ArrayT<T>& vx = value(x);
  const ArrayT<T>& vw = value(w);
  require(vx.rank() == 3, ErrorCode::kShapeMismatch, "conv1d input must be [B, C, L], got " + shape_str(vx.shape()));
  require(vw.rank() == 3, ErrorCode::kShapeMismatch, "conv1d kernel must be [Cout, Cin, K], got " + shape_str(vw.shape()));
  require(stride >= 1 && padding >= 0, ErrorCode::kInvalidArgument, "conv1d requires stride >= 1 and padding >= 0");
  const int batch = vx.dim(0), cin = vx.dim(1), len = vx.dim(2);
  const int cout = vw.dim(0), k = vw.dim(2);
  require(vw.dim(1) == cin, ErrorCode::kShapeMismatch,
          "conv1d input channels: input has " + std::to_string(cin) + ", kernel expects " + std::to_string(vw.dim(1)));
  require(len + 2 * padding >= k, ErrorCode::kShapeMismatch,
          "conv1d temporal length " + std::to_string(len) + " with padding " + std::to_string(padding) +
              " is shorter than kernel " + std::to_string(k));
  if (b.valid())
    require(value(b).shape() == Shape{cout}, ErrorCode::kShapeMismatch,
            "conv1d bias must be [" + std::to_string(cout) + "], got " + shape_str(value(b).shape()));
  const int lout = (len + 2 * padding - k) / stride + 1;
  const std::size_t J = static_cast<std::size_t>(cin) * k;

  std::vector<T> col, colT;
  im2col(vx.data(), batch, cin, len, k, stride, padding, lout, col, colT);
  ArrayT<T> out({batch, cout, lout});
  conv_forward(col, vw.data(), b.valid() ? value(b).data() : nullptr, batch, cout, J, lout, out.data());

  const int ix = x.id, iw = w.id, ib = b.id;
  const bool needs_grad = needs(x) || needs(w) || needs(b);
  if (!needs_grad) return push_dyn(std::move(out), false, nullptr);
  return push_dyn(std::move(out), true,
                  [ix, iw, ib, colT = std::move(colT), batch, cin, len, k, stride, padding, lout, cout, J](Graph& g,
                                                                                                            int self) {
                    const T* go = g.nodes_[self].grad.data();
                    T* dw = g.nodes_[iw].needs_grad ? g.grad_ref(iw).data() : nullptr;
                    T* db = (ib >= 0 && g.nodes_[ib].needs_grad) ? g.grad_ref(ib).data() : nullptr;
                    const bool need_x = g.nodes_[ix].needs_grad;
                    std::vector<T> dcolT;
                    conv_backward(colT, g.nodes_[iw].value().data(), go, batch, cout, J, lout, dw, db,
                                  need_x ? &dcolT : nullptr);
                    if (need_x) col2im(dcolT, batch, cin, len, k, stride, padding, lout, g.grad_ref(ix).data());
                  });
}

template <class T>
Var Graph<T>::conv_transpose1d(Var x, Var w, Var b) {
  const ArrayT<T>& vx = value(x);
  const ArrayT<T>& vw = value(w);
  require(vx.rank() == 3, ErrorCode::kShapeMismatch,
          "conv_transpose1d input must be [B, C, L], got " + shape_str(vx.shape()));
  require(vw.rank() == 3 && vw.dim(0) == vx.dim(1), ErrorCode::kShapeMismatch,
          "conv_transpose1d kernel must be [Cin, Cout, K] with Cin = " + std::to_string(vx.dim(1)) + ", got " +
              shape_str(vw.shape()));
  const int batch = vx.dim(0), cin = vx.dim(1), len = vx.dim(2);
  const int cout = vw.dim(1), k = vw.dim(2);
  if (b.valid())
    require(value(b).shape() == Shape{cout}, ErrorCode::kShapeMismatch, "conv_transpose1d bias shape mismatch");
  // Equivalent to a full-padding convolution with the flipped, channel-swapped
  // kernel wf[co][ci*K + kk] = w[ci][co][K-1-kk].
  const std::size_t J = static_cast<std::size_t>(cin) * k;
  std::vector<T> wf(static_cast<std::size_t>(cout) * J);
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co)
      for (int kk = 0; kk < k; ++kk)
        wf[static_cast<std::size_t>(co) * J + static_cast<std::size_t>(ci) * k + kk] =
            vw[(static_cast<std::size_t>(ci) * cout + co) * k + (k - 1 - kk)];
  const int pad = k - 1;
  const int lout = len + k - 1;
  std::vector<T> col, colT;
  im2col(vx.data(), batch, cin, len, k, 1, pad, lout, col, colT);
  ArrayT<T> out({batch, cout, lout});
  conv_forward(col, wf.data(), b.valid() ? value(b).data() : nullptr, batch, cout, J, lout, out.data());

  const int ix = x.id, iw = w.id, ib = b.id;
  if (!(needs(x) || needs(w) || needs(b))) return push_dyn(std::move(out), false, nullptr);
  return push_dyn(std::move(out), true,
                  [ix, iw, ib, colT = std::move(colT), wf = std::move(wf), batch, cin, len, k, pad, lout, cout, J](
                      Graph& g, int self) {
                    const T* go = g.nodes_[self].grad.data();
                    const bool need_w = g.nodes_[iw].needs_grad;
                    std::vector<T> dwf(need_w ? wf.size() : 0, T(0));
                    T* db = (ib >= 0 && g.nodes_[ib].needs_grad) ? g.grad_ref(ib).data() : nullptr;
                    const bool need_x = g.nodes_[ix].needs_grad;
                    std::vector<T> dcolT;
                    conv_backward(colT, wf.data(), go, batch, cout, J, lout, need_w ? dwf.data() : nullptr, db,
                                  need_x ? &dcolT : nullptr);
                    if (need_x) col2im(dcolT, batch, cin, len, k, 1, pad, lout, g.grad_ref(ix).data());
                    if (need_w) {
                      auto& dw = g.grad_ref(iw);
                      for (int ci = 0; ci < cin; ++ci)
                        for (int co = 0; co < cout; ++co)
                          for (int kk = 0; kk < k; ++kk)
                            dw[(static_cast<std::size_t>(ci) * cout + co) * k + (k - 1 - kk)] +=
                                dwf[static_cast<std::size_t>(co) * J + static_cast<std::size_t>(ci) * k + kk];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Normalization

template <class T>
Var Graph<T>::group_norm(Var x, Var gamma, Var beta, int groups, T eps) {
  const ArrayT<T>& vx = value(x);
  require(vx.rank() >= 2, ErrorCode::kShapeMismatch, "group_norm input must be [B, C, ...]");
  const int batch = vx.dim(0), channels = vx.dim(1);
  require(groups >= 1 && channels % groups == 0, ErrorCode::kInvalidArgument,
          "group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(channels) + " channels");
  const std::size_t inner = vx.size() / (static_cast<std::size_t>(batch) * channels);
  const int cpg = channels / groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * inner;
  require(value(gamma).shape() == Shape{channels} && value(beta).shape() == Shape{channels},
          ErrorCode::kShapeMismatch, "group_norm affine parameters must be [" + std::to_string(channels) + "]");
  const T* g = value(gamma).data();
  const T* bt = value(beta).data();

  ArrayT<T> out(vx.shape());
  ArrayT<T> xhat(vx.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(batch) * groups);
  for (int b = 0; b < batch; ++b)
    for (int gr = 0; gr < groups; ++gr) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels + static_cast<std::size_t>(gr) * cpg) * inner;
      double mean = 0;
      for (std::size_t i = 0; i < group_size; ++i) mean += vx[base + i];
      mean /= static_cast<double>(group_size);
      double var = 0;
      for (std::size_t i = 0; i < group_size; ++i) {
        const double d = vx[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      inv_std[static_cast<std::size_t>(b) * groups + gr] = is;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gr * cpg + c;
        for (std::size_t l = 0; l < inner; ++l) {
          const std::size_t i = base + static_cast<std::size_t>(c) * inner + l;
          const T xh = static_cast<T>((vx[i] - mean)) * is;
          xhat[i] = xh;
          out[i] = xh * g[ch] + bt[ch];
        }
      }
    }
  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  if (!(needs(x) || needs(gamma) || needs(beta))) return push_dyn(std::move(out), false, nullptr);
  return push_dyn(std::move(out), true,
                  [ix, ig, ibt, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, groups, cpg,
                   inner, group_size](Graph& gr_, int self) {
                    const auto& go = gr_.nodes_[self].grad;
                    const T* gm = gr_.nodes_[ig].value().data();
                    T* dg = gr_.nodes_[ig].needs_grad ? gr_.grad_ref(ig).data() : nullptr;
                    T* dbt = gr_.nodes_[ibt].needs_grad ? gr_.grad_ref(ibt).data() : nullptr;
                    T* dx = gr_.nodes_[ix].needs_grad ? gr_.grad_ref(ix).data() : nullptr;
                    for (int b = 0; b < batch; ++b)
                      for (int gr = 0; gr < groups; ++gr) {
                        const std::size_t base =
                            (static_cast<std::size_t>(b) * channels + static_cast<std::size_t>(gr) * cpg) * inner;
                        double sum_d = 0, sum_dx = 0;
                        for (int c = 0; c < cpg; ++c) {
                          const int ch = gr * cpg + c;
                          for (std::size_t l = 0; l < inner; ++l) {
                            const std::size_t i = base + static_cast<std::size_t>(c) * inner + l;
                            if (dg) dg[ch] += go[i] * xhat[i];
                            if (dbt) dbt[ch] += go[i];
                            const double d = static_cast<double>(go[i]) * gm[ch];
                            sum_d += d;
                            sum_dx += d * xhat[i];
                          }
                        }
                        if (!dx) continue;
                        const double is = inv_std[static_cast<std::size_t>(b) * groups + gr];
                        const double m = static_cast<double>(group_size);
                        for (int c = 0; c < cpg; ++c) {
                          const int ch = gr * cpg + c;
                          for (std::size_t l = 0; l < inner; ++l) {
                            const std::size_t i = base + static_cast<std::size_t>(c) * inner + l;
                            const double d = static_cast<double>(go[i]) * gm[ch];
                            dx[i] += static_cast<T>(is * (d - sum_d / m - xhat[i] * sum_dx / m));
                          }
                        }
                      }
                  });
}

template <class T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const ArrayT<T>& vx = value(x);
  const int d = vx.dim(-1);
  const std::size_t rows = vx.size() / static_cast<std::size_t>(d);
  if (gamma.valid())
    require(value(gamma).shape() == Shape{d}, ErrorCode::kShapeMismatch, "layer_norm gamma shape mismatch");
  if (beta.valid())
    require(value(beta).shape() == Shape{d}, ErrorCode::kShapeMismatch, "layer_norm beta shape mismatch");
  const T* g = gamma.valid() ? value(gamma).data() : nullptr;
  const T* bt = beta.valid() ? value(beta).data() : nullptr;
  ArrayT<T> out(vx.shape());
  ArrayT<T> xhat(vx.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = vx.data() + r * d;
    double mean = 0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= d;
    double var = 0;
    for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= d;
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[r] = is;
    for (int i = 0; i < d; ++i) {
      const T xh = static_cast<T>(row[i] - mean) * is;
      xhat[r * d + i] = xh;
      out[r * d + i] = (g ? xh * g[i] : xh) + (bt ? bt[i] : T(0));
    }
  }
  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  if (!(needs(x) || needs(gamma) || needs(beta))) return push_dyn(std::move(out), false, nullptr);
  return push_dyn(std::move(out), true,
                  [ix, ig, ibt, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Graph& gr, int self) {
                    const auto& go = gr.nodes_[self].grad;
                    const T* gm = ig >= 0 ? gr.nodes_[ig].value().data() : nullptr;
                    T* dg = (ig >= 0 && gr.nodes_[ig].needs_grad) ? gr.grad_ref(ig).data() : nullptr;
                    T* dbt = (ibt >= 0 && gr.nodes_[ibt].needs_grad) ? gr.grad_ref(ibt).data() : nullptr;
                    T* dx = gr.nodes_[ix].needs_grad ? gr.grad_ref(ix).data() : nullptr;
                    for (std::size_t r = 0; r < rows; ++r) {
                      double sum_d = 0, sum_dx = 0;
                      for (int i = 0; i < d; ++i) {
                        const std::size_t k = r * d + i;
                        if (dg) dg[i] += go[k] * xhat[k];
                        if (dbt) dbt[i] += go[k];
                        const double dd = static_cast<double>(go[k]) * (gm ? gm[i] : T(1));
                        sum_d += dd;
                        sum_dx += dd * xhat[k];
                      }
                      if (!dx) continue;
                      for (int i = 0; i < d; ++i) {
                        const std::size_t k = r * d + i;
                        const double dd = static_cast<double>(go[k]) * (gm ? gm[i] : T(1));
                        dx[k] += static_cast<T>(inv_std[r] * (dd - sum_d / d - xhat[k] * sum_dx / d));
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Dense algebra

template <class T>
Var Graph<T>::linear(Var x, Var w, Var b) {
  const ArrayT<T>& vx = value(x);
  const ArrayT<T>& vw = value(w);
  require(vw.rank() == 2, ErrorCode::kShapeMismatch, "linear weight must be [out, in]");
  const int in = vw.dim(1), outd = vw.dim(0);
  require(vx.dim(-1) == in, ErrorCode::kShapeMismatch,
          "linear input last dimension " + std::to_string(vx.dim(-1)) + " != weight in-features " + std::to_string(in));
  if (b.valid())
    require(value(b).shape() == Shape{outd}, ErrorCode::kShapeMismatch, "linear bias shape mismatch");
  const std::size_t rows = vx.size() / static_cast<std::size_t>(in);
  Shape os = vx.shape();
  os.back() = outd;
  ArrayT<T> out(os);
  std::vector<T> wt(static_cast<std::size_t>(in) * outd);
  for (int o = 0; o < outd; ++o)
    for (int i = 0; i < in; ++i) wt[static_cast<std::size_t>(i) * outd + o] = vw[static_cast<std::size_t>(o) * in + i];
  for (std::size_t r = 0; r < rows; ++r) {
    T* orow = out.data() + r * outd;
    const T* xrow = vx.data() + r * in;
    for (int i = 0; i < in; ++i) {
      const T xv = xrow[i];
      const T* wrow = wt.data() + static_cast<std::size_t>(i) * outd;
      for (int o = 0; o < outd; ++o) orow[o] += xv * wrow[o];
    }
    if (b.valid()) {
      const T* bv = value(b).data();
      for (int o = 0; o < outd; ++o) orow[o] += bv[o];
    }
  }
  const int ix = x.id, iw = w.id, ib = b.id;
  if (!(needs(x) || needs(w) || needs(b))) return push_dyn(std::move(out), false, nullptr);
  return push_dyn(std::move(out), true, [ix, iw, ib, rows, in, outd](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& vx = g.nodes_[ix].value();
    const auto& vw = g.nodes_[iw].value();
    T* dx = g.nodes_[ix].needs_grad ? g.grad_ref(ix).data() : nullptr;
    T* dw = g.nodes_[iw].needs_grad ? g.grad_ref(iw).data() : nullptr;
    T* db = (ib >= 0 && g.nodes_[ib].needs_grad) ? g.grad_ref(ib).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* grow = go.data() + r * outd;
      const T* xrow = vx.data() + r * in;
      for (int o = 0; o < outd; ++o) {
        const T gv = grow[o];
        if (db) db[o] += gv;
        if (dw) {
          T* dwrow = dw + static_cast<std::size_t>(o) * in;
          for (int i = 0; i < in; ++i) dwrow[i] += gv * xrow[i];
        }
        if (dx) {
          const T* wrow = vw.data() + static_cast<std::size_t>(o) * in;
          T* dxrow = dx + r * in;
          for (int i = 0; i < in; ++i) dxrow[i] += gv * wrow[i];
        }
      }
    }
  });
}

template <class T>
Var Graph<T>::matmul(Var a, Var b) {
  const ArrayT<T>& va = value(a);
  const ArrayT<T>& vb = value(b);
  require(va.rank() >= 2 && va.rank() == vb.rank(), ErrorCode::kShapeMismatch,
          "matmul needs equal ranks >= 2, got " + shape_str(va.shape()) + " and " + shape_str(vb.shape()));
  for (int d = 0; d < va.rank() - 2; ++d)
    require(va.dim(d) == vb.dim(d), ErrorCode::kShapeMismatch,
            "matmul batch dimension " + std::to_string(d) + " differs: " + shape_str(va.shape()) + " vs " +
                shape_str(vb.shape()));
  const int M = va.dim(-2), K = va.dim(-1), N = vb.dim(-1);
  require(vb.dim(-2) == K, ErrorCode::kShapeMismatch,
          "matmul inner dimension mismatch: " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
  const std::size_t batches = va.size() / (static_cast<std::size_t>(M) * K);
  Shape os = va.shape();
  os.back() = N;
  ArrayT<T> out(os);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const T* pa = va.data() + bi * M * K;
    const T* pb = vb.data() + bi * K * N;
    T* po = out.data() + bi * M * N;
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k) {
        const T av = pa[static_cast<std::size_t>(m) * K + k];
        const T* brow = pb + static_cast<std::size_t>(k) * N;
        T* orow = po + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
      }
  }
  const int ia = a.id, ib = b.id;
  return push(std::move(out), {a, b}, [ia, ib, batches, M, K, N](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& va = g.nodes_[ia].value();
    const auto& vb = g.nodes_[ib].value();
    T* da = g.nodes_[ia].needs_grad ? g.grad_ref(ia).data() : nullptr;
    T* db = g.nodes_[ib].needs_grad ? g.grad_ref(ib).data() : nullptr;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const T* pa = va.data() + bi * M * K;
      const T* pb = vb.data() + bi * K * N;
      const T* pg = go.data() + bi * M * N;
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const T* grow = pg + static_cast<std::size_t>(m) * N;
          if (da) {
            const T* brow = pb + static_cast<std::size_t>(k) * N;
            T acc = 0;
            for (int n = 0; n < N; ++n) acc += grow[n] * brow[n];
            da[bi * M * K + static_cast<std::size_t>(m) * K + k] += acc;
          }
          if (db) {
            const T av = pa[static_cast<std::size_t>(m) * K + k];
            T* dbrow = db + bi * K * N + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) dbrow[n] += av * grow[n];
          }
        }
    }
  });
}

template <class T>
Var Graph<T>::softmax(Var x) {
  const ArrayT<T>& vx = value(x);
  const int d = vx.dim(-1);
  const std::size_t rows = vx.size() / static_cast<std::size_t>(d);
  ArrayT<T> out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = vx.data() + r * d;
    T* orow = out.data() + r * d;
    T mx = row[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double s = 0;
    for (int i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - mx);
      s += orow[i];
    }
    const T inv = static_cast<T>(1.0 / s);
    for (int i = 0; i < d; ++i) orow[i] *= inv;
  }
  const int ix = x.id;
  return push(std::move(out), {x}, [ix, rows, d](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.grad_ref(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (int i = 0; i < d; ++i) dot += static_cast<double>(go[r * d + i]) * y[r * d + i];
      for (int i = 0; i < d; ++i) dx[r * d + i] += y[r * d + i] * static_cast<T>(go[r * d + i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Var Graph<T>::permute(Var x, const std::vector<int>& perm) {
  const ArrayT<T>& vx = value(x);
  const int rank = vx.rank();
  require(static_cast<int>(perm.size()) == rank, ErrorCode::kShapeMismatch, "permute rank mismatch");
  std::vector<int> seen(rank, 0);
  for (int p : perm) {
    require(p >= 0 && p < rank && !seen[p], ErrorCode::kInvalidArgument, "permute: invalid permutation");
    seen[p] = 1;
  }
  Shape os(rank);
  for (int d = 0; d < rank; ++d) os[d] = vx.dim(perm[d]);
  std::vector<std::size_t> in_stride(rank);
  std::size_t acc = 1;
  for (int d = rank - 1; d >= 0; --d) {
    in_stride[d] = acc;
    acc *= static_cast<std::size_t>(vx.dim(d));
  }
  // src[i] = flat input offset of output element i.
  std::vector<std::size_t> src(vx.size());
  {
    std::vector<int> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = off;
      for (int d = rank - 1; d >= 0; --d) {
        ++idx[d];
        off += in_stride[perm[d]];
        if (idx[d] < os[d]) break;
        off -= in_stride[perm[d]] * static_cast<std::size_t>(os[d]);
        idx[d] = 0;
      }
    }
  }
  ArrayT<T> out(os);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = vx[src[i]];
  const int ix = x.id;
  return push(std::move(out), {x}, [ix, src = std::move(src)](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < src.size(); ++i) dx[src[i]] += go[i];
  });
}

template <class T>
Var Graph<T>::reshape(Var x, Shape shape) {
  ArrayT<T> out = value(x).reshaped(std::move(shape));
  const int ix = x.id;
  return push(std::move(out), {x}, [ix](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
  });
}

template <class T>
Var Graph<T>::concat(std::span<const Var> xs, int axis) {
  require(!xs.empty(), ErrorCode::kInvalidArgument, "concat of zero arrays");
  const Shape& s0 = value(xs[0]).shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, ErrorCode::kInvalidArgument, "concat axis out of range");
  Shape os = s0;
  os[axis] = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  bool needs_grad = false;
  for (Var v : xs) {
    const Shape& s = value(v).shape();
    require(static_cast<int>(s.size()) == rank, ErrorCode::kShapeMismatch, "concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis)
        require(s[d] == s0[d], ErrorCode::kShapeMismatch,
                "concat dimension " + std::to_string(d) + " mismatch: " + shape_str(s) + " vs " + shape_str(s0));
    os[axis] += s[axis];
    ids.push_back(v.id);
    widths.push_back(s[axis]);
    needs_grad = needs_grad || needs(v);
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[d]);
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(s0[d]);
  ArrayT<T> out(os);
  const std::size_t out_row = static_cast<std::size_t>(os[axis]) * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& v = nodes_[ids[k]].value();
    const std::size_t w = static_cast<std::size_t>(widths[k]) * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * w, w, out.data() + o * out_row + col);
    col += w;
  }
  return push_dyn(std::move(out), needs_grad, [ids, widths, outer, inner, out_row](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    std::size_t col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = static_cast<std::size_t>(widths[k]) * inner;
      if (g.nodes_[ids[k]].needs_grad) {
        auto& dx = g.grad_ref(ids[k]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < w; ++i) dx[o * w + i] += go[o * out_row + col + i];
      }
      col += w;
    }
  });
}

template <class T>
Var Graph<T>::slice(Var x, int axis, int start, int length) {
  const ArrayT<T>& vx = value(x);
  const int rank = vx.rank();
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, ErrorCode::kInvalidArgument, "slice axis out of range");
  require(start >= 0 && length >= 1 && start + length <= vx.dim(axis), ErrorCode::kShapeMismatch,
          "slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for axis " +
              std::to_string(axis) + " of " + shape_str(vx.shape()));
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(vx.dim(d));
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(vx.dim(d));
  Shape os = vx.shape();
  os[axis] = length;
  ArrayT<T> out(os);
  const std::size_t in_row = static_cast<std::size_t>(vx.dim(axis)) * inner;
  const std::size_t w = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(vx.data() + o * in_row + off, w, out.data() + o * w);
  const int ix = x.id;
  return push(std::move(out), {x}, [ix, outer, in_row, w, off](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    auto& dx = g.grad_ref(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < w; ++i) dx[o * in_row + off + i] += go[o * w + i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Var Graph<T>::sum(Var x) {
  const ArrayT<T>& vx = value(x);
  double s = 0;
  for (T v : vx.vec()) s += v;
  const int ix = x.id;
  return push(ArrayT<T>({1}, std::vector<T>{static_cast<T>(s)}), {x}, [ix](Graph& g, int self) {
    const T go = g.nodes_[self].grad[0];
    auto& dx = g.grad_ref(ix);
    for (auto& v : dx.vec()) v += go;
  });
}

template <class T>
Var Graph<T>::mean(Var x) {
  const ArrayT<T>& vx = value(x);
  double s = 0;
  for (T v : vx.vec()) s += v;
  const double n = static_cast<double>(vx.size());
  const int ix = x.id;
  return push(ArrayT<T>({1}, std::vector<T>{static_cast<T>(s / n)}), {x}, [ix, n](Graph& g, int self) {
    const T go = static_cast<T>(g.nodes_[self].grad[0] / n);
    auto& dx = g.grad_ref(ix);
    for (auto& v : dx.vec()) v += go;
  });
}

template <class T>
Var Graph<T>::mean_square(Var x) {
  const ArrayT<T>& vx = value(x);
  double s = 0;
  for (T v : vx.vec()) s += static_cast<double>(v) * v;
  const double n = static_cast<double>(vx.size());
  const int ix = x.id;
  return push(ArrayT<T>({1}, std::vector<T>{static_cast<T>(s / n)}), {x}, [ix, n](Graph& g, int self) {
    const double go = g.nodes_[self].grad[0];
    const auto& vx = g.nodes_[ix].value();
    auto& dx = g.grad_ref(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(2.0 * go * vx[i] / n);
  });
}

template <class T>
Var Graph<T>::weighted_sq_error(Var pred, const ArrayT<T>& target, const ArrayT<T>& weight) {
  const ArrayT<T>& vp = value(pred);
  require(target.shape() == vp.shape() && weight.shape() == vp.shape(), ErrorCode::kShapeMismatch,
          "weighted_sq_error: target/weight must match prediction shape " + shape_str(vp.shape()));
  const double batch = vp.dim(0);
  double s = 0;
  for (std::size_t i = 0; i < vp.size(); ++i) {
    const double r = (static_cast<double>(target[i]) - vp[i]) * weight[i];
    s += r * r;
  }
  const int ip = pred.id;
  return push(ArrayT<T>({1}, std::vector<T>{static_cast<T>(s / batch)}), {pred},
              [ip, target, weight, batch](Graph& g, int self) {
                const double go = g.nodes_[self].grad[0];
                const auto& vp = g.nodes_[ip].value();
                auto& dp = g.grad_ref(ip);
                for (std::size_t i = 0; i < dp.size(); ++i) {
                  const double w = weight[i];
                  dp[i] += static_cast<T>(-2.0 * go * (static_cast<double>(target[i]) - vp[i]) * w * w / batch);
                }
              });
}

template <class T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> labels) {
  const ArrayT<T>& vl = value(logits);
  require(vl.rank() == 2, ErrorCode::kShapeMismatch, "cross_entropy logits must be [B, K]");
  const int batch = vl.dim(0), k = vl.dim(1);
  require(static_cast<int>(labels.size()) == batch, ErrorCode::kShapeMismatch, "cross_entropy label count mismatch");
  std::vector<double> probs(vl.size());
  double loss = 0;
  for (int b = 0; b < batch; ++b) {
    require(labels[b] >= 0 && labels[b] < k, ErrorCode::kInvalidArgument, "cross_entropy label out of range");
    const T* row = vl.data() + static_cast<std::size_t>(b) * k;
    double mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max<double>(mx, row[i]);
    double s = 0;
    for (int i = 0; i < k; ++i) s += std::exp(row[i] - mx);
    const double lse = mx + std::log(s);
    for (int i = 0; i < k; ++i) probs[static_cast<std::size_t>(b) * k + i] = std::exp(row[i] - lse);
    loss += lse - row[labels[b]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const int il = logits.id;
  return push(ArrayT<T>({1}, std::vector<T>{static_cast<T>(loss / batch)}), {logits},
              [il, probs = std::move(probs), lab = std::move(lab), batch, k](Graph& g, int self) {
                const double go = g.nodes_[self].grad[0] / batch;
                auto& dl = g.grad_ref(il);
                for (int b = 0; b < batch; ++b)
                  for (int i = 0; i < k; ++i) {
                    const std::size_t j = static_cast<std::size_t>(b) * k + i;
                    dl[j] += static_cast<T>(go * (probs[j] - (i == lab[b] ? 1.0 : 0.0)));
                  }
              });
}

template <class T>
void Graph<T>::backward(Var loss) {
  const ArrayT<T>& lv = value(loss);
  require(lv.size() == 1, ErrorCode::kInvalidArgument,
          "backward requires a scalar loss, got shape " + shape_str(lv.shape()));
  for (auto& n : nodes_) n.grad = ArrayT<T>();
  grad_ref(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (auto& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    auto& pg = n.param->grad;
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pdpp
