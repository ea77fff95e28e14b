#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "scd/params.hpp"
#include "scd/tensor.hpp"

namespace scd::ad {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// The computation record: every executed op in execution order, which is
// already a topological order, so the reverse pass is a single backwards
// sweep. A tape is single-threaded; separate tapes may live on separate
// threads and share read-only parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  // With record_gradients == false nothing requires a gradient and no
  // backward closures are stored (inference).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // A leaf that accumulates a gradient (used by tests and gradient checks).
  Var input(Tensor value);
  // A leaf bound to a parameter without copying it. Repeated calls for the
  // same id return the same leaf.
  Var parameter(const ParamSet& params, ParamId id);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar output. Can only run once per tape.
  void backward(Var loss);

  // Gradient per parameter after backward(); parameters never touched by this
  // tape get zero tensors.
  Gradients parameter_gradients(const ParamSet& params) const;

  // Op-author interface.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }

  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool backward_done_ = false;
  bool record_gradients_ = true;
};

// Differentiable ops. Matrix ops take rank-2 values; a bias or gain of
// length m broadcasts over rows.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var add_bias(Var a, Var bias);
Var add_constant(Var a, const Tensor& c);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var sum(Var a);
Var softmax_rows(Var a);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var dropout(Var a, double rate, std::mt19937_64& rng);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
// Rescales every row to Euclidean norm `target`.
Var normalize_rows(Var a, double target);
// Multi-head scaled dot-product attention on already projected q [n, d],
// k [m, d], v [m, d]; heads split the columns evenly. With `causal`, query row
// t only sees key rows 0..t. Returns the concatenated head outputs [n, d].
Var attention_heads(Var q, Var k, Var v, std::size_t heads, bool causal);
// Mean cross-entropy of row-wise softmax(logits) against class targets.
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

}  // namespace scd::ad
