#pragma once

#include <span>
#include <string>
#include <vector>

#include "pdpp/autodiff.hpp"
#include "pdpp/params.hpp"

namespace pdpp {

enum class Activation { kMish, kSilu };

template <class T>
Var activate(Graph<T>& g, Var x, Activation act) {
  return act == Activation::kMish ? g.mish(x) : g.silu(x);
}

// Interleaved [sin(n f_0), cos(n f_0), sin(n f_1), ...], f_k = 10000^(-k/(dim/2)).
// Returns [B, dim] for B = steps.size(); dim must be even.
template <class T>
ArrayT<T> sinusoidal_embedding(std::span<const int> steps, int dim);

template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;  // [out, in]
  Parameter<T>* bias = nullptr;    // [out]

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true);
  Var operator()(Graph<T>& g, Var x) const;
};

template <class T>
struct Conv1d {
  Parameter<T>* weight = nullptr;  // [out, in, k]
  Parameter<T>* bias = nullptr;
  int stride = 1;
  int padding = 0;

  Conv1d() = default;
  Conv1d(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int stride, int padding,
         Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

template <class T>
struct ConvTranspose1d {
  Parameter<T>* weight = nullptr;  // [in, out, k]
  Parameter<T>* bias = nullptr;

  ConvTranspose1d() = default;
  ConvTranspose1d(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

template <class T>
struct GroupNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParameterStore<T>& store, const std::string& name, int channels, int groups);
  Var operator()(Graph<T>& g, Var x) const;
};

// conv -> group norm -> activation
template <class T>
struct ConvBlock {
  Conv1d<T> conv;
  GroupNorm<T> norm;
  Activation act = Activation::kMish;

  ConvBlock() = default;
  ConvBlock(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel, int groups,
            Activation act, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

// Two conv blocks; the projected time embedding is added after the first.
// A 1x1 convolution aligns the skip path when channel counts differ.
template <class T>
struct ResidualBlock {
  ConvBlock<T> block1;
  ConvBlock<T> block2;
  Linear<T> time_proj;
  Conv1d<T> skip;
  bool has_skip = false;
  Activation act = Activation::kMish;

  ResidualBlock() = default;
  ResidualBlock(ParameterStore<T>& store, const std::string& name, int in, int out, int time_dim, int kernel,
                int groups, Activation act, Rng& rng);
  // x [B, in, L], temb [B, time_dim]
  Var operator()(Graph<T>& g, Var x, Var temb) const;
};

// Multi-head self-attention over the middle axis of [B, L, D].
template <class T>
struct SelfAttention {
  Linear<T> qkv;
  Linear<T> out;
  int heads = 1;
  int dim = 0;

  SelfAttention() = default;
  SelfAttention(ParameterStore<T>& store, const std::string& name, int dim, int heads, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

// Residual attention over temporal positions of a [B, C, L] feature map.
template <class T>
struct AttentionBlock {
  GroupNorm<T> norm;
  SelfAttention<T> attn;

  AttentionBlock() = default;
  AttentionBlock(ParameterStore<T>& store, const std::string& name, int channels, int heads, int groups, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

// Sinusoid followed by Linear -> Mish -> Linear.
template <class T>
struct TimeEmbedding {
  Linear<T> fc1;
  Linear<T> fc2;
  int dim = 0;

  TimeEmbedding() = default;
  TimeEmbedding(ParameterStore<T>& store, const std::string& name, int dim, Rng& rng);
  Var operator()(Graph<T>& g, std::span<const int> steps) const;
};

// Convex combination sum_e weights[e] * outputs[e]; weights is [E] or [1, E].
template <class T>
Var moe_combine(Graph<T>& g, std::span<const Var> outputs, Var weights);

// Gate for learned routing: one-hot horizon -> Linear -> Mish -> Linear -> softmax.
template <class T>
struct RoutingGate {
  Linear<T> fc1;
  Linear<T> fc2;
  int num_horizons = 0;

  RoutingGate() = default;
  RoutingGate(ParameterStore<T>& store, const std::string& name, int num_horizons, int num_experts, Rng& rng);
  // Returns [1, E] expert weights for the given horizon index.
  Var operator()(Graph<T>& g, int horizon_index) const;
};

}  // namespace pdpp
