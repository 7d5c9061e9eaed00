#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hat/autodiff.hpp"
#include "hat/gradcheck.hpp"
#include "hat/net.hpp"
#include "hat/tensor.hpp"

namespace hat::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Builds an op from tape leaves. The result need not be scalar.
using OpBuilder = std::function<Var(const std::vector<Var>&)>;

// Worst relative error, over all inputs, between tape gradients and central
// differences of sum(op(inputs) * probe) where probe is a fixed random
// tensor of the output shape. Inputs flagged false in `differentiate` are
// held constant.
inline double op_gradient_error(const OpBuilder& op, const std::vector<Tensor>& inputs,
                                std::uint64_t seed, double h = 1e-5,
                                std::vector<bool> differentiate = {}) {
  if (differentiate.empty()) differentiate.assign(inputs.size(), true);
  Tensor probe;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    probe = random_tensor(op(leaves).shape(), seed ^ 0x9e3779b97f4a7c15ULL);
  }
  auto weighted = [&](const Tensor& out) {
    double acc = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) acc += out[k] * probe[k];
    return acc;
  };

  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t k = 0; k < inputs.size(); ++k) leaves.push_back(tape.leaf(inputs[k], differentiate[k]));
  const Var out = op(leaves);
  tape.backward(sum(mul(out, tape.constant(probe))));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!differentiate[k]) continue;
    const Tensor numeric = finite_diff(
        [&](const Tensor& x) {
          Tape t2;
          std::vector<Var> l2;
          for (std::size_t j = 0; j < inputs.size(); ++j) l2.push_back(t2.constant(j == k ? x : inputs[j]));
          return weighted(op(l2).value());
        },
        inputs[k], h);
    worst = std::max(worst, relative_error(leaves[k].grad(), numeric));
  }
  return worst;
}

// Labels for a B-row batch over `classes` classes.
inline std::vector<int> random_labels(std::size_t batch, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> y(batch);
  for (auto& v : y) v = static_cast<int>(rng() % classes);
  return y;
}

// Loss after one full HAT forward pass (layer updates included) from a
// copy of the given state. Nothing is persisted.
inline double hat_step_loss(LearnerState learner, const MetaLearner& meta, const Tensor& x,
                            const std::vector<int>& y, double eta) {
  Tape tape;
  const LearnerVars lv = bind(tape, learner, false);
  const SynapseUpdate update = bind(tape, meta, false);
  const Var logits = forward_hat(learner, lv, update, tape.constant(x), eta);
  return softmax_cross_entropy(logits, y).value().item();
}

struct HatGradientReport {
  double worst = 0.0;
  std::size_t checked = 0;  // parameter tensors compared
};

// Compares every learner and meta gradient of one composed HAT step with
// central differences of hat_step_loss.
inline HatGradientReport hat_step_gradient_error(const LearnerState& learner, const MetaLearner& meta,
                                                 const Tensor& x, const std::vector<int>& y, double eta,
                                                 double h = 1e-5) {
  LearnerState live = learner;
  Tape tape;
  const LearnerVars lv = bind(tape, live, true);
  const MetaVars mv = bind(tape, meta, true);
  const Var logits = forward_hat(live, lv, SynapseUpdate{mv}, tape.constant(x), eta);
  tape.backward(softmax_cross_entropy(logits, y));

  HatGradientReport report;
  auto compare = [&](const Tensor& analytic, const Tensor& numeric) {
    report.worst = std::max(report.worst, relative_error(analytic, numeric));
    ++report.checked;
  };
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    compare(lv.weights[l].grad(), finite_diff(
                                      [&](const Tensor& w) {
                                        LearnerState probe = learner;
                                        probe.weights[l] = w;
                                        return hat_step_loss(probe, meta, x, y, eta);
                                      },
                                      learner.weights[l], h));
    compare(lv.biases[l].grad(), finite_diff(
                                     [&](const Tensor& b) {
                                       LearnerState probe = learner;
                                       probe.biases[l] = b;
                                       return hat_step_loss(probe, meta, x, y, eta);
                                     },
                                     learner.biases[l], h));
  }
  Tensor MetaLearner::*const fields[] = {&MetaLearner::kernel1, &MetaLearner::bias1, &MetaLearner::kernel2,
                                         &MetaLearner::bias2};
  const Var* vars[] = {&mv.kernel1, &mv.bias1, &mv.kernel2, &mv.bias2};
  for (int f = 0; f < 4; ++f) {
    compare(vars[f]->grad(), finite_diff(
                                 [&](const Tensor& p) {
                                   MetaLearner probe = meta;
                                   probe.*fields[f] = p;
                                   return hat_step_loss(learner, probe, x, y, eta);
                                 },
                                 meta.*fields[f], h));
  }
  return report;
}

}  // namespace hat::testing
