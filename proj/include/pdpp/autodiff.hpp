#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pdpp/array.hpp"
#include "pdpp/params.hpp"

namespace pdpp {

// Handle to a node of a Graph. Only meaningful together with its graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Tape-based reverse-mode differentiation. Nodes are appended in evaluation
// order, so the tape is already topologically sorted. Every op is a member so
// that one explicit instantiation per scalar type covers the whole op set.
//
// Reductions that feed a loss accumulate in double regardless of T.
template <class T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(ArrayT<T> value);
  // Leaf referencing the parameter's storage; backward accumulates into p.grad.
  Var param(Parameter<T>& p);

  const ArrayT<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  // Gradient of the last backward() target with respect to v (zeros if v
  // did not reach the target).
  ArrayT<T> grad(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Same-rank numpy-style broadcasting.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  // x * mask + fill with constant mask and fill of x's shape.
  Var affine_const(Var x, const ArrayT<T>& mask, const ArrayT<T>& fill);

  Var mish(Var x);
  Var silu(Var x);

  // x [B, Cin, L], w [Cout, Cin, K], b [Cout] (b may be invalid).
  Var conv1d(Var x, Var w, Var b, int stride, int padding);
  // Stride 1, no padding: x [B, Cin, L], w [Cin, Cout, K] -> [B, Cout, L+K-1].
  Var conv_transpose1d(Var x, Var w, Var b);

  // x [B, C, ...]; statistics per (sample, group) over channels-in-group and
  // all trailing positions.
  Var group_norm(Var x, Var gamma, Var beta, int groups, T eps = T(1e-5));
  // Normalizes over the last axis. gamma/beta may be invalid (no affine).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));

  // x [..., in], w [out, in], b [out] (may be invalid) -> [..., out].
  Var linear(Var x, Var w, Var b);
  // a [..., M, K], b [..., K, N] with identical leading dims.
  Var matmul(Var a, Var b);
  Var softmax(Var x);

  Var permute(Var x, const std::vector<int>& perm);
  Var reshape(Var x, Shape shape);
  Var concat(std::span<const Var> xs, int axis);
  Var slice(Var x, int axis, int start, int length);

  Var sum(Var x);
  Var mean(Var x);
  Var mean_square(Var x);
  // (1/B) * sum(((target - pred) * weight)^2), B = leading dim of pred.
  Var weighted_sq_error(Var pred, const ArrayT<T>& target, const ArrayT<T>& weight);
  // Mean over rows of -log softmax(logits)[label]; logits [B, K].
  Var cross_entropy(Var logits, std::span<const int> labels);

  // Populates gradients for every node reaching `loss` and accumulates them
  // into the referenced parameters' grad arrays.
  void backward(Var loss);

 private:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    ArrayT<T> own;
    const ArrayT<T>* ref = nullptr;
    Parameter<T>* param = nullptr;
    ArrayT<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
    const ArrayT<T>& value() const { return ref ? *ref : own; }
  };

  Var push(ArrayT<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push_dyn(ArrayT<T> value, bool needs_grad, BackwardFn fn);
  bool needs(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }
  ArrayT<T>& grad_ref(int id);
  const Node& node(Var v) const;

  Var broadcast_binary(Var a, Var b, int kind);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace pdpp
