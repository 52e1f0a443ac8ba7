#include "pdpp/layers.hpp"

#include <cmath>

namespace pdpp {

template <class T>
ArrayT<T> sinusoidal_embedding(std::span<const int> steps, int dim) {
  require(dim >= 2 && dim % 2 == 0, ErrorCode::kInvalidArgument, "sinusoidal embedding dim must be even");
  const int half = dim / 2;
  ArrayT<T> out({static_cast<int>(steps.size()), dim});
  for (std::size_t b = 0; b < steps.size(); ++b)
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = steps[b] * freq;
      out[b * dim + 2 * k] = static_cast<T>(std::sin(arg));
      out[b * dim + 2 * k + 1] = static_cast<T>(std::cos(arg));
    }
  return out;
}

template <class T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  weight = &store.add(name + ".weight", {out, in}, in, rng);
  if (with_bias) bias = &store.add(name + ".bias", {out}, 0, rng);
}

template <class T>
Var Linear<T>::operator()(Graph<T>& g, Var x) const {
  return g.linear(x, g.param(*weight), bias ? g.param(*bias) : Var{});
}

template <class T>
Conv1d<T>::Conv1d(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int stride_,
                  int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  weight = &store.add(name + ".weight", {out, in, kernel}, in * kernel, rng);
  bias = &store.add(name + ".bias", {out}, 0, rng);
}

template <class T>
Var Conv1d<T>::operator()(Graph<T>& g, Var x) const {
  return g.conv1d(x, g.param(*weight), g.param(*bias), stride, padding);
}

template <class T>
ConvTranspose1d<T>::ConvTranspose1d(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel,
                                    Rng& rng) {
  weight = &store.add(name + ".weight", {in, out, kernel}, in * kernel, rng);
  bias = &store.add(name + ".bias", {out}, 0, rng);
}

template <class T>
Var ConvTranspose1d<T>::operator()(Graph<T>& g, Var x) const {
  return g.conv_transpose1d(x, g.param(*weight), g.param(*bias));
}

template <class T>
GroupNorm<T>::GroupNorm(ParameterStore<T>& store, const std::string& name, int channels, int groups_)
    : groups(groups_) {
  require(channels % groups == 0, ErrorCode::kInvalidArgument,
          name + ": " + std::to_string(groups) + " groups do not divide " + std::to_string(channels) + " channels");
  gamma = &store.add_constant(name + ".gamma", {channels}, T(1));
  beta = &store.add_constant(name + ".beta", {channels}, T(0));
}

template <class T>
Var GroupNorm<T>::operator()(Graph<T>& g, Var x) const {
  return g.group_norm(x, g.param(*gamma), g.param(*beta), groups);
}

template <class T>
ConvBlock<T>::ConvBlock(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int groups,
                        Activation act_, Rng& rng)
    : conv(store, name + ".conv", in, out, kernel, 1, kernel / 2, rng),
      norm(store, name + ".norm", out, groups),
      act(act_) {}

template <class T>
Var ConvBlock<T>::operator()(Graph<T>& g, Var x) const {
  return activate(g, norm(g, conv(g, x)), act);
}

template <class T>
ResidualBlock<T>::ResidualBlock(ParameterStore<T>& store, const std::string& name, int in, int out, int time_dim,
                                int kernel, int groups, Activation act_, Rng& rng)
    : block1(store, name + ".block1", in, out, kernel, groups, act_, rng),
      block2(store, name + ".block2", out, out, kernel, groups, act_, rng),
      time_proj(store, name + ".time", time_dim, out, rng),
      has_skip(in != out),
      act(act_) {
  if (has_skip) skip = Conv1d<T>(store, name + ".skip", in, out, 1, 1, 0, rng);
}

template <class T>
Var ResidualBlock<T>::operator()(Graph<T>& g, Var x, Var temb) const {
  Var h = block1(g, x);
  Var t = time_proj(g, activate(g, temb, act));
  const Shape ts = g.shape(t);
  h = g.add(h, g.reshape(t, {ts[0], ts[1], 1}));
  h = block2(g, h);
  return g.add(h, has_skip ? skip(g, x) : x);
}

template <class T>
SelfAttention<T>::SelfAttention(ParameterStore<T>& store, const std::string& name, int dim_, int heads_, Rng& rng)
    : qkv(store, name + ".qkv", dim_, 3 * dim_, rng), out(store, name + ".out", dim_, dim_, rng), heads(heads_),
      dim(dim_) {
  require(heads >= 1 && dim % heads == 0, ErrorCode::kInvalidArgument,
          name + ": " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
}

template <class T>
Var SelfAttention<T>::operator()(Graph<T>& g, Var x) const {
  const Shape xs = g.shape(x);
  const int B = xs[0], L = xs[1], hd = dim / heads;
  Var q = qkv(g, x);                                 // [B, L, 3D]
  q = g.reshape(q, {B, L, 3, heads, hd});
  q = g.permute(q, {2, 0, 3, 1, 4});                 // [3, B, H, L, hd]
  Var qh = g.reshape(g.slice(q, 0, 0, 1), {B, heads, L, hd});
  Var kh = g.reshape(g.slice(q, 0, 1, 1), {B, heads, L, hd});
  Var vh = g.reshape(g.slice(q, 0, 2, 1), {B, heads, L, hd});
  Var scores = g.scale(g.matmul(qh, g.permute(kh, {0, 1, 3, 2})), static_cast<T>(1.0 / std::sqrt(double(hd))));
  Var ctx = g.matmul(g.softmax(scores), vh);         // [B, H, L, hd]
  ctx = g.reshape(g.permute(ctx, {0, 2, 1, 3}), {B, L, dim});
  return out(g, ctx);
}

template <class T>
AttentionBlock<T>::AttentionBlock(ParameterStore<T>& store, const std::string& name, int channels, int heads,
                                  int groups, Rng& rng)
    : norm(store, name + ".norm", channels, groups), attn(store, name + ".attn", channels, heads, rng) {}

template <class T>
Var AttentionBlock<T>::operator()(Graph<T>& g, Var x) const {
  Var h = g.permute(norm(g, x), {0, 2, 1});
  h = g.permute(attn(g, h), {0, 2, 1});
  return g.add(x, h);
}

template <class T>
TimeEmbedding<T>::TimeEmbedding(ParameterStore<T>& store, const std::string& name, int dim_, Rng& rng)
    : fc1(store, name + ".fc1", dim_, 4 * dim_, rng), fc2(store, name + ".fc2", 4 * dim_, dim_, rng), dim(dim_) {}

template <class T>
Var TimeEmbedding<T>::operator()(Graph<T>& g, std::span<const int> steps) const {
  Var s = g.constant(sinusoidal_embedding<T>(steps, dim));
  return fc2(g, g.mish(fc1(g, s)));
}

template <class T>
Var moe_combine(Graph<T>& g, std::span<const Var> outputs, Var weights) {
  require(!outputs.empty(), ErrorCode::kInvalidArgument, "moe_combine needs at least one expert output");
  const std::size_t E = g.value(weights).size();
  require(E == outputs.size(), ErrorCode::kShapeMismatch,
          "moe_combine: " + std::to_string(E) + " weights for " + std::to_string(outputs.size()) + " experts");
  Var flat = g.reshape(weights, {static_cast<int>(E)});
  const int rank = static_cast<int>(g.shape(outputs[0]).size());
  Var acc{};
  for (std::size_t e = 0; e < E; ++e) {
    Var w = g.reshape(g.slice(flat, 0, static_cast<int>(e), 1), Shape(rank, 1));
    Var term = g.mul(outputs[e], w);
    acc = acc.valid() ? g.add(acc, term) : term;
  }
  return acc;
}

template <class T>
RoutingGate<T>::RoutingGate(ParameterStore<T>& store, const std::string& name, int num_horizons_, int num_experts,
                            Rng& rng)
    : fc1(store, name + ".fc1", num_horizons_, 16, rng), fc2(store, name + ".fc2", 16, num_experts, rng),
      num_horizons(num_horizons_) {}

template <class T>
Var RoutingGate<T>::operator()(Graph<T>& g, int horizon_index) const {
  ArrayT<T> onehot({1, num_horizons});
  onehot[static_cast<std::size_t>(horizon_index)] = T(1);
  return g.softmax(fc2(g, g.mish(fc1(g, g.constant(std::move(onehot))))));
}

#define PDPP_INSTANTIATE_LAYERS(T)                                                \
  template ArrayT<T> sinusoidal_embedding<T>(std::span<const int>, int);          \
  template struct Linear<T>;                                                      \
  template struct Conv1d<T>;                                                      \
  template struct ConvTranspose1d<T>;                                             \
  template struct GroupNorm<T>;                                                   \
  template struct ConvBlock<T>;                                                   \
  template struct ResidualBlock<T>;                                               \
  template struct SelfAttention<T>;                                               \
  template struct AttentionBlock<T>;                                              \
  template struct TimeEmbedding<T>;                                               \
  template Var moe_combine<T>(Graph<T>&, std::span<const Var>, Var);              \
  template struct RoutingGate<T>;

PDPP_INSTANTIATE_LAYERS(float)
PDPP_INSTANTIATE_LAYERS(double)

}  // namespace pdpp
