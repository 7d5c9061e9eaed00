#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hat/tensor.hpp"

namespace hat {

enum class OptimizerKind { kSgd, kAdam };

std::optional<OptimizerKind> parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Gradient-based parameter update. Moment estimates persist across steps
/// and are matched to parameters by position.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t steps_taken() const noexcept { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  std::size_t steps_ = 0;
};

}  // namespace hat
