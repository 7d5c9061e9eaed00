#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hat/analysis.hpp"
#include "hat/data.hpp"
#include "hat/net.hpp"
#include "hat/optim.hpp"
#include "hat/rules.hpp"

namespace hat {

enum class TrainMode {
  kHat,         // meta-learned forward update, meta trained by backprop
  kControl,     // backprop only
  kFrozenMeta,  // meta-learned forward update, meta never trained
  kFixedRule,   // a fixed LocalRule in place of the meta-learner
};

std::optional<TrainMode> parse_mode(std::string_view name);
std::string_view mode_name(TrainMode mode);
std::vector<std::string> mode_names();

struct TrainConfig {
  std::vector<std::size_t> layer_sizes = {784, 183, 10};
  std::size_t meta_hidden = 100;
  std::size_t batch_size = 50;
  std::size_t epochs = 20;
  double label_fraction = 1.0;
  double eta_m = 0.01;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::vector<std::size_t> snapshot_schedule;
  TrainMode mode = TrainMode::kHat;
  LocalRule rule;               // used by kFixedRule
  bool meta_zero_init = false;  // start the meta-learner as the zero function
  std::size_t evals_per_epoch = 10;
  std::size_t snapshot_grid_points = 41;

  void validate() const;
};

/// One long-format metrics row: step,epoch,split,metric,value.
struct MetricRow {
  std::size_t step = 0;
  double epoch = 0.0;
  std::string split;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// The meta-learner at training step `step` plus its grid evaluation.
struct RuleSnapshot {
  std::size_t step = 0;
  MetaLearner meta;
  RuleTable table;
};

struct RunRecord {
  std::vector<MetricRow> rows;
  LearnerState learner;
  MetaLearner meta;
  std::vector<RuleSnapshot> snapshots;
  std::vector<std::size_t> missing_snapshots;  // steps whose sink write failed
  std::size_t supervised_steps = 0;
  std::size_t unsupervised_steps = 0;
  std::size_t labeled_examples = 0;
  bool failed = false;
  std::string failure;

  /// Test accuracy at each evaluation point, in step order.
  std::vector<std::pair<std::size_t, double>> test_accuracy() const;
};

/// One HAT step on a batch (rows of x). Labels equal to kIgnoreLabel mark
/// unlabeled rows. Every layer is updated by the meta-learner during the
/// forward pass; if any row is labeled, the cross-entropy over labeled rows
/// is backpropagated once and `learner_opt` / `meta_opt` are applied.
/// A null `meta_opt` keeps the meta-learner fixed. Returns the loss, or
/// nothing when the batch had no labels.
std::optional<double> train_batch_hat(LearnerState& learner, MetaLearner& meta,
                                      Optimizer& learner_opt, Optimizer* meta_opt,
                                      const Tensor& x, std::span<const int> labels, double eta_m);

/// As train_batch_hat with a fixed local rule in place of the meta-learner.
std::optional<double> train_batch_rule(LearnerState& learner, const LocalRule& rule,
                                       Optimizer& learner_opt, const Tensor& x,
                                       std::span<const int> labels, double eta_m);

/// Plain forward, cross-entropy, backward, optimizer step.
std::optional<double> train_batch_control(LearnerState& learner, Optimizer& learner_opt,
                                          const Tensor& x, std::span<const int> labels);

/// Seeded per-example labeled/unlabeled assignment, fixed for a whole run.
std::vector<bool> label_mask(std::size_t n, double fraction, std::uint64_t seed);

double accuracy(const LearnerState& learner, const Dataset& data);

RuleSnapshot snapshot_meta(const MetaLearner& meta, std::size_t step, const GridAxes& axes);

/// Called for every snapshot as it is taken (for example to write it out).
/// An I/O error thrown here marks the snapshot missing; the run goes on.
using SnapshotSink = std::function<void(const RuleSnapshot&)>;

/// Full training run. Failures (non-finite values) are reported in the
/// record rather than thrown.
RunRecord run_training(const TrainConfig& config, const Dataset& train, const Dataset& test,
                       const SnapshotSink& sink = {});

}  // namespace hat
