#pragma once

// Experiment orchestration shared by the CLI and the acceptance suite:
// JSON configuration, ensembles of isolated runs, median/quartile curves,
// and the CSV outputs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hat/data.hpp"
#include "hat/train.hpp"

namespace hat {

struct DataConfig {
  std::string source = "fashion";  // "fashion" or "synthetic"
  std::string data_dir = "data";
  std::size_t train_subset = 10000;  // 0 keeps the full split
  std::size_t test_subset = 2000;
  std::size_t synthetic_train = 1000;
  std::size_t synthetic_test = 200;
  std::uint64_t synthetic_seed = 0;
  std::string base_url = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com";
  std::map<std::string, std::string> sha256;  // file name -> expected hex digest
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
};

/// Every field materialized, including defaults.
nlohmann::json to_json(const RunConfig& config);
/// Starts from defaults and applies `doc`; unknown keys raise a config error
/// naming the key.
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Loads train and test splits as described by `config`.
std::pair<Dataset, Dataset> load_data(const DataConfig& config);

struct EnsembleSpec {
  RunConfig base;
  std::size_t runs = 10;
  std::vector<std::uint64_t> seeds;  // defaults to base seed + 0..runs-1
  std::vector<TrainMode> modes = {TrainMode::kHat, TrainMode::kControl};
  std::vector<double> label_fractions = {1.0};
  std::size_t jobs = 0;  // concurrent runs; 0 = OpenMP default

  void validate() const;
  std::vector<std::uint64_t> resolved_seeds() const;
};

nlohmann::json to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& doc);

/// What an ensemble keeps from each run.
struct RunSummary {
  double label_fraction = 1.0;
  TrainMode mode = TrainMode::kHat;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  std::vector<std::pair<std::size_t, double>> test_accuracy;  // (step, accuracy)
  double steps_per_epoch = 1.0;
  MetaLearner meta;
};

struct CurvePoint {
  double label_fraction = 1.0;
  TrainMode mode = TrainMode::kHat;
  std::size_t step = 0;
  double epoch = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

/// Linear-interpolation percentile (q in [0, 1]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// Median and quartiles per (fraction, mode, eval step) over completed runs.
std::vector<CurvePoint> aggregate_curves(const std::vector<RunSummary>& runs);

/// Median final test accuracy per (fraction, mode).
std::map<std::pair<double, TrainMode>, double> final_medians(const std::vector<RunSummary>& runs);

/// Invoked after each run finishes, from the worker that ran it.
using RunCallback = std::function<void(const RunSummary&, const RunRecord&)>;

/// Executes runs x modes x fractions as isolated tasks, concurrently when
/// jobs != 1. Results are ordered by (fraction, mode, seed) irrespective
/// of completion order. Throws a run-failure error if every run of some
/// (fraction, mode) group failed.
std::vector<RunSummary> run_ensemble(const EnsembleSpec& spec, const Dataset& train,
                                     const Dataset& test, const RunCallback& on_run = {});

// ---- outputs --------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, const RunRecord& record);
void write_curves_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curves);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<RunSummary>& runs);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace hat
