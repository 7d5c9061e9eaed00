#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "hat/autodiff.hpp"
#include "hat/rules.hpp"
#include "hat/tensor.hpp"

namespace hat {

/// Parameters of the learner MLP. Layer l maps layer_sizes[l] inputs to
/// layer_sizes[l + 1] outputs with weights[l] (n_out x n_in) and
/// biases[l] (n_out x 1).
struct LearnerState {
  std::vector<std::size_t> layer_sizes;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::vector<Activation> activations;

  std::size_t num_layers() const { return weights.size(); }
};

/// The pointwise rule network M(v_i, w_ij, v_j) -> dw_ij: 3 -> H -> 1 with
/// a ReLU hidden layer.
struct MetaLearner {
  Tensor kernel1;  // H x 3, columns (v_i, w, v_j)
  Tensor bias1;    // H
  Tensor kernel2;  // 1 x H
  Tensor bias2;    // 1

  std::size_t hidden() const { return bias1.size(); }
  /// Direct dense evaluation of M at one synapse triple.
  double operator()(double v_i, double w, double v_j) const;
  RuleFn as_function() const;

  static MetaLearner zeros(std::size_t hidden);
};

/// Sigmoid hidden layers, identity output. Weights and biases drawn from
/// uniform(-1/sqrt(n_in), 1/sqrt(n_in)).
LearnerState build_learner(std::span<const std::size_t> layer_sizes, std::uint64_t seed);
MetaLearner build_meta(std::size_t hidden, std::uint64_t seed);

/// Tape bindings of the parameters for one training step.
struct LearnerVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

LearnerVars bind(Tape& tape, const LearnerState& learner, bool requires_grad);
MetaVars bind(Tape& tape, const MetaLearner& meta, bool requires_grad);

/// Source of the forward-pass synapse update: none (plain backprop), the
/// learned meta network, or a fixed local rule.
using SynapseUpdate = std::variant<std::monostate, MetaVars, LocalRule>;

/// eta * mean over the batch of M applied to every synapse triple.
/// Result has the shape of W. Uses the fused kernel.
Var meta_delta(const MetaVars& meta, const Var& v_in, const Var& W, const Var& v_out,
               double eta);

/// The same quantity built literally from broadcast_stack, two 1x1
/// convolutions with a ReLU between, and mean_axis0. Materializes the
/// 3 x B x n_out x n_in stack and the H x B x n_out x n_in hidden tensor.
Var meta_delta_conv(const MetaVars& meta, const Var& v_in, const Var& W, const Var& v_out,
                    double eta);

/// One layer of the forward pass with a local update:
///   placeholder = act(W v + b)
///   W <- W + update(v, W, placeholder)      (persisted into `learner`)
///   return act(W v + b)
/// With std::monostate this is a plain layer and the weights are untouched.
Var layer_forward_hat(std::size_t layer, LearnerState& learner, const LearnerVars& vars,
                      const SynapseUpdate& update, const Var& v, double eta);

/// Runs every layer through layer_forward_hat; returns the logits (B x C).
Var forward_hat(LearnerState& learner, const LearnerVars& vars, const SynapseUpdate& update,
                const Var& x, double eta);

/// Tape-free forward pass for evaluation.
Tensor predict(const LearnerState& learner, const Tensor& x);

// ---- checkpoints ------------------------------------------------------------
//
// Flat binary: "HATW", u32 version, u32 tensor count, then per tensor
// u32 rank, u32 extents, f64 values. All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_checkpoint(const std::filesystem::path& path);

void save_meta(const std::filesystem::path& path, const MetaLearner& meta);
MetaLearner load_meta(const std::filesystem::path& path);
void save_learner(const std::filesystem::path& path, const LearnerState& learner);
LearnerState load_learner(const std::filesystem::path& path);

}  // namespace hat
