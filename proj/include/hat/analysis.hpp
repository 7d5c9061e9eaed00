#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hat/net.hpp"
#include "hat/rules.hpp"

namespace hat {

std::vector<double> linspace(double lo, double hi, std::size_t points);

/// Evaluation grid over the rule inputs.
struct GridAxes {
  std::vector<double> v_i;
  std::vector<double> w;
  std::vector<double> v_j;

  /// v_i, v_j in [0, 1] (sigmoid range), w in [-3, 3].
  static GridAxes defaults(std::size_t points = 41);
  std::size_t size() const { return v_i.size() * w.size() * v_j.size(); }
  void validate() const;

  friend bool operator==(const GridAxes&, const GridAxes&) = default;
};

/// A rule evaluated on a grid. values[(a * |w| + b) * |v_j| + c] holds the
/// output at (v_i[a], w[b], v_j[c]).
struct RuleTable {
  GridAxes axes;
  std::vector<double> values;
  std::optional<double> t;
  std::string provenance;

  std::size_t index(std::size_t a, std::size_t b, std::size_t c) const {
    return (a * axes.w.size() + b) * axes.v_j.size() + c;
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const { return values[index(a, b, c)]; }
};

enum class RuleAxis { kVi = 0, kW = 1, kVj = 2 };

std::string_view axis_name(RuleAxis axis);

RuleTable grid_eval(const RuleFn& rule, const GridAxes& axes);
RuleTable grid_eval(const MetaLearner& meta, const GridAxes& axes);

/// Mean of the meta-learners as functions (not of their parameters).
RuleFn mean_rule(std::span<const MetaLearner> metas);
RuleTable pointwise_mean(std::span<const MetaLearner> metas, const GridAxes& axes);

struct LinearFit {
  double r2 = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  bool zero_variance = false;  // table is constant; r2 reported as 0
};

/// Ordinary least squares of the table values on one input axis.
LinearFit variance_explained(const RuleTable& table, RuleAxis axis);

struct JointFit {
  double r2 = 0.0;
  double intercept = 0.0;
  std::array<double, 3> coefficients{};  // v_i, w, v_j
  bool zero_variance = false;
};

/// OLS of the table values on all three inputs jointly.
JointFit joint_fit(const RuleTable& table);

/// Distance between two tables on a common grid by trapezoidal quadrature,
/// normalized by the grid volume: the integral of |A - B| under the uniform
/// distribution on the grid box.
RuleDistance table_distance(const RuleTable& a, const RuleTable& b);

/// Uniform samples from the box spanned by the axes.
std::vector<RuleSample> sample_uniform(const GridAxes& axes, std::size_t n, std::uint64_t seed);

struct PhaseInterval {
  double t_from = 0.0;
  double t_to = 0.0;
  RuleDistance distance;
  bool flagged = false;
};

struct PhaseScan {
  std::vector<PhaseInterval> intervals;
  std::vector<std::array<LinearFit, 3>> fits;  // per snapshot, per axis
  double median_distance = 0.0;
  double threshold = 0.0;
};

/// Compares consecutive snapshots; flags intervals whose distance exceeds
/// `multiple` times the median inter-snapshot distance.
PhaseScan phase_scan(std::span<const RuleTable> snapshots, double multiple = 3.0);

// ---- files ----------------------------------------------------------------

/// Columns v_i,w,v_j,delta_w[,t].
void write_rule_table_csv(const std::filesystem::path& path, const RuleTable& table);
RuleTable read_rule_table_csv(const std::filesystem::path& path);

/// Columns axis,r2,slope,intercept; one row per input axis.
void write_summary_csv(const std::filesystem::path& path, const RuleTable& table);

/// Scatter of the table values against one axis.
void write_scatter_svg(const std::filesystem::path& path, const RuleTable& table, RuleAxis axis);

}  // namespace hat
