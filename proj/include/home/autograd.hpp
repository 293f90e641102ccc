#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "home/tensor.hpp"

namespace home::ag {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> values() const;
  std::size_t size() const;
  /// Value of a single-element tensor.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order and replays their local gradients
/// in reverse. Nodes are appended only after their inputs, so the record is
/// always topologically ordered. A tape supports exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor data;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const Tensor* source = nullptr;  // set for parameter leaves
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor t);
  /// Leaf owned by the tape that receives a gradient (used by tests and probes).
  Var input(Tensor t);
  /// Leaf bound to an external parameter tensor. Repeated calls with the same
  /// tensor return the same leaf so shared weights accumulate one gradient.
  Var parameter(const Tensor& source);

  /// Reverse pass from a scalar loss. Throws ContractError if the loss is not
  /// a scalar on this tape or if backward already ran.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  std::span<const double> grad(Var v) const;
  /// Gradients of every parameter leaf that took part in the computation.
  std::vector<std::pair<const Tensor*, std::span<const double>>> parameter_grads() const;

  std::size_t size() const { return nodes_.size(); }
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  /// Gradient buffer of a node during backward (allocated lazily).
  std::vector<double>& grad_buffer(std::size_t id);

  /// Appends an op result. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::size_t> param_index_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// Shape convention for broadcasting: the second operand's shape must equal a
// trailing suffix of the first's (or vice versa); it repeats over the leading
// dimensions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var exp(Var a);
Var log(Var a);
/// Elementwise clamp; gradient passes where lo <= x <= hi.
Var clamp(Var a, double lo, double hi);
/// Elementwise minimum; on ties the gradient goes to `a`.
Var minimum(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var gelu(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a);  // over the last axis of a 2-D tensor

/// y = x / sqrt(mean(x^2) + eps) * scale, row-wise over a [n x d] input.
Var rms_norm(Var x, Var scale, double eps = 1e-6);
/// Rows of `table` [V x d] selected by ids -> [len(ids) x d].
Var embedding(Var table, std::span<const int> ids);
/// Multi-head causal scaled dot-product attention; q, k, v are [T x d].
Var causal_attention(Var q, Var k, Var v, std::size_t n_heads);

/// Mean of -log softmax(logits)[target] over positions with mask != 0.
/// Throws ContractError when every position is masked.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
/// log softmax(logits)[i, targets[i]] for every row -> [n].
Var gather_logprobs(Var logits, std::span<const int> targets);

}  // namespace home::ag
