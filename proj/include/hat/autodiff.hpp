#pragma once

// Reverse-mode automatic differentiation on a per-step tape.
//
// A Tape records operations in execution order; each recorded node keeps
// its forward value and a closure that, given the node's output gradient,
// accumulates gradients into the node's inputs. Because nodes can only be
// recorded after their inputs, reverse index order is a valid reverse
// topological order and backward() visits each node exactly once.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hat/kernels.hpp"
#include "hat/rules.hpp"
#include "hat/tensor.hpp"

namespace hat {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient after Tape::backward; zeros if none reached this node.
  const Tensor& grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Accumulates the node's input gradients; `self` is the node's index.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op output. `inputs` must already live on this tape.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Populates gradients of every node that `loss` depends on.
  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor& grad(std::size_t id) const;
  /// Zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until a gradient reaches the node
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

enum class Activation { kSigmoid, kRelu, kIdentity };

std::optional<Activation> parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);
double activate(Activation kind, double z);

// ---- ops ------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var reshape(const Var& a, Shape shape);
Var activation(const Var& x, Activation kind);

/// a[m x k] * b[k x n].
Var matmul(const Var& a, const Var& b);

/// activation(x * W^T + b) for a batch stored one example per row:
/// W is m x k, x is B x k, b is m x 1 (or m); result is B x m.
Var affine_activation(const Var& W, const Var& x, const Var& b, Activation kind);

/// Stacks the synapse triples of one layer into a 3 x B x n_out x n_in tensor:
/// channel 0 = v_in (B x n_in), channel 1 = W (n_out x n_in),
/// channel 2 = v_out (B x n_out).
Var broadcast_stack(const Var& v_in, const Var& W, const Var& v_out);

/// 1x1 convolution: input is C_in x (sites...), kernel C_out x C_in,
/// bias C_out. Output is C_out x (sites...).
Var conv1x1(const Var& input, const Var& kernel, const Var& bias);

/// Mean over the leading axis.
Var mean_axis0(const Var& input);

/// Label value that excludes a row from the loss.
inline constexpr int kIgnoreLabel = -1;

/// Mean over labeled rows of -log softmax(logits)[label]. logits is B x C.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Parameters of the pointwise 3 -> H -> 1 network as tape variables.
struct MetaVars {
  Var kernel1;  // H x 3
  Var bias1;    // H
  Var kernel2;  // 1 x H
  Var bias2;    // 1
};

/// Fused eta * mean_b M(v_in, W, v_out) over every synapse; equivalent to
/// mean_axis0 of conv1x1 -> relu -> conv1x1 applied to broadcast_stack,
/// without materializing the stacked tensor.
Var synapse_meta_delta(const MetaVars& meta, const Var& v_in, const Var& W,
                       const Var& v_out, double eta);

/// Fused eta * mean_b rule(v_in, W, v_out) over every synapse.
Var synapse_rule_delta(const LocalRule& rule, const Var& v_in, const Var& W,
                       const Var& v_out, double eta);

}  // namespace hat
