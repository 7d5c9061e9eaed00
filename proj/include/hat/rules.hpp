#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hat {

/// A local rule maps the synapse triple (v_i, w_ij, v_j) to a weight change.
/// Every rule in this header is pure, so the same inputs give the same output.
using RuleFn = std::function<double(double v_i, double w, double v_j)>;

enum class RuleKind { kZero, kHebb, kOja, kLinear2Vj };

/// Partial derivatives of a rule output with respect to its three inputs.
struct RulePartials {
  double d_vi = 0.0;
  double d_w = 0.0;
  double d_vj = 0.0;
};

/// Fixed (non-learned) local rules usable in place of the meta-learner.
struct LocalRule {
  RuleKind kind = RuleKind::kZero;
  double eta = 0.01;  // rate for hebb and oja; unused by zero and linear2vj

  double operator()(double v_i, double w, double v_j) const noexcept {
    switch (kind) {
      case RuleKind::kZero: return 0.0;
      case RuleKind::kHebb: return eta * v_i * v_j;
      case RuleKind::kOja: return eta * v_j * (v_i - v_j * w);
      case RuleKind::kLinear2Vj: return 2.0 * v_j;
    }
    return 0.0;
  }

  RulePartials partials(double v_i, double w, double v_j) const noexcept {
    switch (kind) {
      case RuleKind::kZero: return {};
      case RuleKind::kHebb: return {eta * v_j, 0.0, eta * v_i};
      case RuleKind::kOja:
        return {eta * v_j, -eta * v_j * v_j, eta * (v_i - 2.0 * v_j * w)};
      case RuleKind::kLinear2Vj: return {0.0, 0.0, 2.0};
    }
    return {};
  }

  std::string id() const;
  RuleFn as_function() const { return *this; }
};

// Standard textbook forms; each returns the pointwise update.
double hebb(double v_i, double w, double v_j, double eta = 0.01);
double oja(double v_i, double w, double v_j, double eta = 0.01);
/// The converged "rich-get-richer" rule: 2 * v_j regardless of v_i and w.
double extracted_linear(double v_i, double w, double v_j);

/// Parses a CLI rule identifier: hebb, oja, linear2vj, zero.
std::optional<LocalRule> parse_rule(std::string_view id, double eta = 0.01);
std::vector<std::string> rule_ids();

struct RuleSample {
  double v_i = 0.0;
  double w = 0.0;
  double v_j = 0.0;
};

struct RuleDistance {
  double mean_abs = 0.0;     // the metric: E_F |A - B|
  double signed_mean = 0.0;  // E_F (A - B), reported alongside
};

/// Monte-Carlo estimate of the distance between two rules under the
/// empirical input distribution given by `samples`.
RuleDistance rule_distance(const RuleFn& a, const RuleFn& b,
                           std::span<const RuleSample> samples);

}  // namespace hat
