#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hat/analysis.hpp"
#include "hat/errors.hpp"
#include "hat/rules.hpp"

using namespace hat;

TEST(Hebb, Definition) {
  EXPECT_EQ(hebb(0.0, 4.2, 5.0), 0.0);
  EXPECT_EQ(hebb(2.0, 0.0, 3.0, 1.0), 6.0);
  EXPECT_DOUBLE_EQ(hebb(2.0, 0.0, 3.0), 0.06);
}

TEST(Oja, Definition) {
  EXPECT_EQ(oja(0.7, -1.0, 0.0, 1.0), 0.0);
  EXPECT_EQ(oja(1.0, 1.0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(oja(0.5, 2.0, 0.25, 1.0), 0.25 * (0.5 - 0.25 * 2.0));
}

// Single linear neuron y = w.x, inputs with unit variance, per-synapse Oja.
TEST(Oja, NormStaysBoundedOver10kSteps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> w(8);
  for (auto& v : w) v = n01(rng);
  double worst = 0.0;
  for (int step = 0; step < 10000; ++step) {
    std::vector<double> x(w.size());
    for (auto& v : x) v = n01(rng);
    double y = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) y += w[i] * x[i];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += oja(x[i], w[i], y, 0.01);
    double norm = 0.0;
    for (double v : w) norm += v * v;
    worst = std::max(worst, std::sqrt(norm));
  }
  EXPECT_LT(worst, 10.0);
}

TEST(ExtractedLinear, Definition) {
  EXPECT_EQ(extracted_linear(3.0, -8.0, 0.0), 0.0);
  EXPECT_EQ(extracted_linear(7.0, -3.0, 1.5), 3.0);
}

TEST(LocalRule, MatchesFreeFunctionsAndIsPure) {
  const LocalRule h = *parse_rule("hebb", 0.3), o = *parse_rule("oja", 0.3), l = *parse_rule("linear2vj"),
                  z = *parse_rule("zero");
  for (double vi : {0.0, 0.4, 1.0})
    for (double w : {-2.0, 0.5})
      for (double vj : {0.1, 0.9}) {
        EXPECT_EQ(h(vi, w, vj), hebb(vi, w, vj, 0.3));
        EXPECT_EQ(o(vi, w, vj), oja(vi, w, vj, 0.3));
        EXPECT_EQ(l(vi, w, vj), extracted_linear(vi, w, vj));
        EXPECT_EQ(z(vi, w, vj), 0.0);
        EXPECT_EQ(o(vi, w, vj), o(vi, w, vj));
      }
  EXPECT_FALSE(parse_rule("gha"));
  EXPECT_EQ(rule_ids(), (std::vector<std::string>{"hebb", "oja", "linear2vj", "zero"}));
}

TEST(LocalRule, PartialsMatchFiniteDifferences) {
  const double h = 1e-6;
  for (const auto& id : rule_ids()) {
    const LocalRule r = *parse_rule(id, 0.7);
    for (auto [vi, w, vj] : {std::tuple{0.3, -1.1, 0.8}, {0.9, 2.0, 0.1}}) {
      const auto p = r.partials(vi, w, vj);
      EXPECT_NEAR(p.d_vi, (r(vi + h, w, vj) - r(vi - h, w, vj)) / (2 * h), 1e-8) << id;
      EXPECT_NEAR(p.d_w, (r(vi, w + h, vj) - r(vi, w - h, vj)) / (2 * h), 1e-8) << id;
      EXPECT_NEAR(p.d_vj, (r(vi, w, vj + h) - r(vi, w, vj - h)) / (2 * h), 1e-8) << id;
    }
  }
}

TEST(RuleDistance, IdenticalRulesAreZero) {
  const auto samples = sample_uniform(GridAxes::defaults(), 1000, 1);
  const auto d = rule_distance(hat::LocalRule{RuleKind::kOja, 0.5}.as_function(),
                               hat::LocalRule{RuleKind::kOja, 0.5}.as_function(), samples);
  EXPECT_EQ(d.mean_abs, 0.0);
  EXPECT_EQ(d.signed_mean, 0.0);
}

TEST(RuleDistance, ConstantIntegrand) {
  std::vector<RuleSample> samples;
  for (double a : {0.5, 2.0, 4.0, 1.0}) samples.push_back({a, 0.3, 1.0 / a});
  const auto d = rule_distance([](double vi, double w, double vj) { return hebb(vi, w, vj, 1.0); },
                               [](double vi, double w, double vj) { return hebb(vi, w, vj, 2.0); }, samples);
  EXPECT_DOUBLE_EQ(d.mean_abs, 1.0);
  EXPECT_DOUBLE_EQ(d.signed_mean, -1.0);
}

TEST(RuleDistance, EmptySamplesIsUsageError) {
  try {
    rule_distance(extracted_linear, extracted_linear, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
}

TEST(RuleDistance, SymmetricAndTriangle) {
  const auto samples = sample_uniform(GridAxes::defaults(), 5000, 2);
  const RuleFn rules[] = {LocalRule{RuleKind::kHebb, 1.0}.as_function(), LocalRule{RuleKind::kOja, 1.0}.as_function(),
                          extracted_linear, LocalRule{}.as_function()};
  for (const auto& a : rules)
    for (const auto& b : rules) {
      const double ab = rule_distance(a, b, samples).mean_abs;
      EXPECT_EQ(ab, rule_distance(b, a, samples).mean_abs);
      for (const auto& c : rules) {
        EXPECT_LE(ab, rule_distance(a, c, samples).mean_abs + rule_distance(c, b, samples).mean_abs + 1e-12);
      }
    }
}
