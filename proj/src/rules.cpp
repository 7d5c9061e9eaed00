#include "hat/rules.hpp"

#include <cmath>

#include "hat/errors.hpp"

namespace hat {

std::string LocalRule::id() const {
  switch (kind) {
    case RuleKind::kZero: return "zero";
    case RuleKind::kHebb: return "hebb";
    case RuleKind::kOja: return "oja";
    case RuleKind::kLinear2Vj: return "linear2vj";
  }
  return "zero";
}

double hebb(double v_i, double w, double v_j, double eta) {
  return LocalRule{RuleKind::kHebb, eta}(v_i, w, v_j);
}

double oja(double v_i, double w, double v_j, double eta) {
  return LocalRule{RuleKind::kOja, eta}(v_i, w, v_j);
}

double extracted_linear(double v_i, double w, double v_j) {
  return LocalRule{RuleKind::kLinear2Vj, 0.0}(v_i, w, v_j);
}

std::optional<LocalRule> parse_rule(std::string_view id, double eta) {
  if (id == "zero") return LocalRule{RuleKind::kZero, eta};
  if (id == "hebb") return LocalRule{RuleKind::kHebb, eta};
  if (id == "oja") return LocalRule{RuleKind::kOja, eta};
  if (id == "linear2vj") return LocalRule{RuleKind::kLinear2Vj, eta};
  return std::nullopt;
}

std::vector<std::string> rule_ids() { return {"hebb", "oja", "linear2vj", "zero"}; }

RuleDistance rule_distance(const RuleFn& a, const RuleFn& b,
                           std::span<const RuleSample> samples) {
  if (samples.empty()) fail(ErrorKind::kUsage, "rule_distance: empty sample set");
  double abs_sum = 0.0;
  double signed_sum = 0.0;
  for (const auto& s : samples) {
    const double d = a(s.v_i, s.w, s.v_j) - b(s.v_i, s.w, s.v_j);
    abs_sum += std::abs(d);
    signed_sum += d;
  }
  const double n = static_cast<double>(samples.size());
  return {abs_sum / n, signed_sum / n};
}

}  // namespace hat
