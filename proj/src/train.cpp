#include "hat/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <cmath>
#include <random>
#include <set>

#include "hat/errors.hpp"

namespace hat {

std::optional<TrainMode> parse_mode(std::string_view name) {
  if (name == "hat") return TrainMode::kHat;
  if (name == "control") return TrainMode::kControl;
  if (name == "frozen_meta") return TrainMode::kFrozenMeta;
  if (name == "fixed_rule") return TrainMode::kFixedRule;
  return std::nullopt;
}

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kHat: return "hat";
    case TrainMode::kControl: return "control";
    case TrainMode::kFrozenMeta: return "frozen_meta";
    case TrainMode::kFixedRule: return "fixed_rule";
  }
  return "hat";
}

std::vector<std::string> mode_names() { return {"hat", "control", "frozen_meta", "fixed_rule"}; }

void TrainConfig::validate() const {
  if (layer_sizes.size() < 2) fail(ErrorKind::kConfig, "layer_sizes needs at least 2 entries");
  for (auto n : layer_sizes) {
    if (n == 0) fail(ErrorKind::kConfig, "layer_sizes entries must be positive");
  }
  if (meta_hidden < 1) fail(ErrorKind::kConfig, "meta_hidden must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be >= 1");
  if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1");
  if (!(label_fraction >= 0.0 && label_fraction <= 1.0)) {
    fail(ErrorKind::kConfig, "label_fraction must lie in [0, 1]");
  }
  if (!std::isfinite(eta_m)) fail(ErrorKind::kConfig, "eta_m must be finite");
  if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) {
    fail(ErrorKind::kConfig, "optimizer.lr must be finite and >= 0");
  }
  if (evals_per_epoch < 1) fail(ErrorKind::kConfig, "evals_per_epoch must be >= 1");
  if (snapshot_grid_points < 2) fail(ErrorKind::kConfig, "snapshot_grid_points must be >= 2");
}

std::vector<std::pair<std::size_t, double>> RunRecord::test_accuracy() const {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& row : rows) {
    if (row.split == "test" && row.metric == "accuracy") out.emplace_back(row.step, row.value);
  }
  return out;
}

namespace {

bool any_labeled(std::span<const int> labels) {
  return std::any_of(labels.begin(), labels.end(), [](int y) { return y != kIgnoreLabel; });
}

void check_finite(const LearnerState& learner, std::string_view when) {
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    if (learner.weights[l].has_nonfinite() || learner.biases[l].has_nonfinite()) {
      fail(ErrorKind::kRunFailure, "non-finite learner parameters in layer " + std::to_string(l) +
                                       " " + std::string(when));
    }
  }
}

// Shared body of the three step kinds.
std::optional<double> train_step(LearnerState& learner, MetaLearner* meta, const LocalRule* rule,
                                 Optimizer& learner_opt, Optimizer* meta_opt, const Tensor& x,
                                 std::span<const int> labels, double eta_m) {
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    fail(ErrorKind::kDimension, "batch " + to_string(x.shape()) + " vs " +
                                    std::to_string(labels.size()) + " labels");
  }
  const bool supervised = any_labeled(labels);
  Tape tape;
  const LearnerVars lv = bind(tape, learner, supervised);
  SynapseUpdate update;
  if (meta) {
    update = bind(tape, *meta, supervised && meta_opt != nullptr);
  } else if (rule) {
    update = *rule;
  }
  const Var logits = forward_hat(learner, lv, update, tape.constant(x), eta_m);
  check_finite(learner, "after the forward-pass update");
  if (!supervised) return std::nullopt;

  const Var loss = softmax_cross_entropy(logits, labels);
  const double value = loss.value().item();
  if (!std::isfinite(value)) fail(ErrorKind::kRunFailure, "non-finite training loss");
  tape.backward(loss);

  // Gradients are taken w.r.t. the pre-update leaves and applied to the
  // post-update weights now held in `learner`.
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    params.push_back(&learner.weights[l]);
    grads.push_back(&lv.weights[l].grad());
    params.push_back(&learner.biases[l]);
    grads.push_back(&lv.biases[l].grad());
  }
  learner_opt.step(params, grads);

  if (meta && meta_opt) {
    const auto& mv = std::get<MetaVars>(update);
    Tensor* mp[] = {&meta->kernel1, &meta->bias1, &meta->kernel2, &meta->bias2};
    const Tensor* mg[] = {&mv.kernel1.grad(), &mv.bias1.grad(), &mv.kernel2.grad(),
                          &mv.bias2.grad()};
    meta_opt->step(mp, mg);
    for (const Tensor* t : mp) {
      if (t->has_nonfinite()) fail(ErrorKind::kRunFailure, "non-finite meta-learner parameters");
    }
  }
  check_finite(learner, "after the gradient update");
  return value;
}

}  // namespace

std::optional<double> train_batch_hat(LearnerState& learner, MetaLearner& meta,
                                      Optimizer& learner_opt, Optimizer* meta_opt,
                                      const Tensor& x, std::span<const int> labels, double eta_m) {
  return train_step(learner, &meta, nullptr, learner_opt, meta_opt, x, labels, eta_m);
}

std::optional<double> train_batch_rule(LearnerState& learner, const LocalRule& rule,
                                       Optimizer& learner_opt, const Tensor& x,
                                       std::span<const int> labels, double eta_m) {
  return train_step(learner, nullptr, &rule, learner_opt, nullptr, x, labels, eta_m);
}

std::optional<double> train_batch_control(LearnerState& learner, Optimizer& learner_opt,
                                          const Tensor& x, std::span<const int> labels) {
  return train_step(learner, nullptr, nullptr, learner_opt, nullptr, x, labels, 0.0);
}

std::vector<bool> label_mask(std::size_t n, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = coin(rng) < fraction;
  return mask;
}

double accuracy(const LearnerState& learner, const Dataset& data) {
  constexpr std::size_t kChunk = 1000;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, data.size());
    rows.resize(end - start);
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = start + r;
    const Tensor logits = predict(learner, gather_rows(data, rows));
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = logits.data().subspan(r * classes, classes);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == data.labels[start + r]) ++correct;
    }
  }
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

RuleSnapshot snapshot_meta(const MetaLearner& meta, std::size_t step, const GridAxes& axes) {
  RuleSnapshot snap{step, meta, grid_eval(meta, axes)};
  snap.table.t = static_cast<double>(step);
  snap.table.provenance = "snapshot at step " + std::to_string(step);
  return snap;
}

RunRecord run_training(const TrainConfig& config, const Dataset& train, const Dataset& test,
                       const SnapshotSink& sink) {
  config.validate();
  if (train.size() == 0) fail(ErrorKind::kConfig, "training dataset is empty");
  if (config.batch_size > train.size()) {
    fail(ErrorKind::kConfig, "batch_size exceeds the training set size");
  }
  if (train.features() != config.layer_sizes.front()) {
    fail(ErrorKind::kConfig, "dataset has " + std::to_string(train.features()) +
                                 " features but layer_sizes starts with " +
                                 std::to_string(config.layer_sizes.front()));
  }

  RunRecord record;
  record.learner = build_learner(config.layer_sizes, derive_seed(config.seed, 1));
  record.meta = config.meta_zero_init ? MetaLearner::zeros(config.meta_hidden)
                                      : build_meta(config.meta_hidden, derive_seed(config.seed, 2));
  Optimizer learner_opt(config.optimizer);
  Optimizer meta_opt(config.optimizer);
  Optimizer* trained_meta = config.mode == TrainMode::kHat ? &meta_opt : nullptr;

  const auto mask = label_mask(train.size(), config.label_fraction, derive_seed(config.seed, 3));
  record.labeled_examples = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));

  const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  std::set<std::size_t> eval_steps = {0};
  for (std::size_t e = 0; e < config.epochs; ++e)
    for (std::size_t q = 1; q <= config.evals_per_epoch; ++q)
      eval_steps.insert(e * per_epoch + (q * per_epoch + config.evals_per_epoch - 1) / config.evals_per_epoch);
  const std::set<std::size_t> snapshot_steps(config.snapshot_schedule.begin(),
                                             config.snapshot_schedule.end());
  const GridAxes grid = GridAxes::defaults(config.snapshot_grid_points);

  auto epoch_of = [per_epoch](std::size_t step) {
    return static_cast<double>(step) / static_cast<double>(per_epoch);
  };
  auto after_step = [&](std::size_t step) {
    if (eval_steps.count(step)) {
      record.rows.push_back({step, epoch_of(step), "test", "accuracy", accuracy(record.learner, test)});
    }
    if (snapshot_steps.count(step)) {
      record.snapshots.push_back(snapshot_meta(record.meta, step, grid));
      if (sink) {
        try {
          sink(record.snapshots.back());
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kIo) throw;
          record.missing_snapshots.push_back(step);
        } catch (const std::filesystem::filesystem_error&) {
          record.missing_snapshots.push_back(step);
        }
      }
    }
  };

  std::size_t step = 0;
  try {
    after_step(step);
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      for (const auto& idx : batches(train.size(), config.batch_size, derive_seed(config.seed, 4), epoch)) {
        const Tensor x = gather_rows(train, idx);
        labels.resize(idx.size());
        std::size_t labeled = 0;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          labels[r] = mask[idx[r]] ? train.labels[idx[r]] : kIgnoreLabel;
          labeled += mask[idx[r]];
        }
        std::optional<double> loss;
        switch (config.mode) {
          case TrainMode::kHat:
          case TrainMode::kFrozenMeta:
            loss = train_batch_hat(record.learner, record.meta, learner_opt, trained_meta, x, labels,
                                   config.eta_m);
            break;
          case TrainMode::kControl:
            loss = train_batch_control(record.learner, learner_opt, x, labels);
            break;
          case TrainMode::kFixedRule:
            loss = train_batch_rule(record.learner, config.rule, learner_opt, x, labels, config.eta_m);
            break;
        }
        ++step;
        (loss ? record.supervised_steps : record.unsupervised_steps) += 1;
        record.rows.push_back({step, epoch_of(step), "train", "labeled", static_cast<double>(labeled)});
        if (loss) record.rows.push_back({step, epoch_of(step), "train", "loss", *loss});
        after_step(step);
      }
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      record.rows.push_back({step, epoch_of(step), "train", "epoch_seconds", seconds});
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kRunFailure) throw;
    record.failed = true;
    record.failure = "step " + std::to_string(step) + ": " + e.what();
  }
  return record;
}

}  // namespace hat
