#include "hat/optim.hpp"

#include <cmath>

#include "hat/errors.hpp"

namespace hat {

std::optional<OptimizerKind> parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  return std::nullopt;
}

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::kUsage, "optimizer: parameter/gradient count mismatch");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p]->shape() != grads[p]->shape()) {
      fail(ErrorKind::kUsage, "optimizer: parameter " + to_string(params[p]->shape()) +
                                  " vs gradient " + to_string(grads[p]->shape()));
    }
  }
  ++steps_;

  if (config_.kind == OptimizerKind::kSgd) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto value = params[p]->data();
      auto grad = grads[p]->data();
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= config_.lr * grad[i];
    }
    return;
  }

  if (first_moment_.empty()) {
    for (const Tensor* param : params) {
      first_moment_.emplace_back(param->shape(), 0.0);
      second_moment_.emplace_back(param->shape(), 0.0);
    }
  } else if (first_moment_.size() != params.size()) {
    fail(ErrorKind::kUsage, "optimizer: parameter set changed between steps");
  }

  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p]->data();
    auto grad = grads[p]->data();
    auto m = first_moment_[p].data();
    auto v = second_moment_[p].data();
    if (m.size() != value.size()) fail(ErrorKind::kUsage, "optimizer: parameter shape changed");
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace hat
