#include "hat/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>

#include "hat/errors.hpp"

namespace hat {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& value, std::string_view key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kConfig, "config key '" + std::string(key) + "' has the wrong type");
  }
}

std::string mode_label(TrainMode mode) { return std::string(mode_name(mode)); }

TrainMode mode_from(const json& value, std::string_view key) {
  const auto name = get_as<std::string>(value, key);
  const auto mode = parse_mode(name);
  if (!mode) fail(ErrorKind::kConfig, "config key '" + std::string(key) + "': unknown mode '" + name + "'");
  return *mode;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- run configuration ----------------------------------------------------

json to_json(const RunConfig& config) {
  const TrainConfig& t = config.train;
  const DataConfig& d = config.data;
  return json{
      {"layer_sizes", t.layer_sizes},
      {"meta_hidden", t.meta_hidden},
      {"batch_size", t.batch_size},
      {"epochs", t.epochs},
      {"label_fraction", t.label_fraction},
      {"eta_m", t.eta_m},
      {"optimizer",
       {{"kind", std::string(optimizer_name(t.optimizer.kind))},
        {"lr", t.optimizer.lr},
        {"beta1", t.optimizer.beta1},
        {"beta2", t.optimizer.beta2},
        {"eps", t.optimizer.eps}}},
      {"seed", t.seed},
      {"snapshot_schedule", t.snapshot_schedule},
      {"mode", std::string(mode_name(t.mode))},
      {"rule", t.rule.id()},
      {"rule_eta", t.rule.eta},
      {"meta_zero_init", t.meta_zero_init},
      {"evals_per_epoch", t.evals_per_epoch},
      {"snapshot_grid_points", t.snapshot_grid_points},
      {"data_source", d.source},
      {"data_dir", d.data_dir},
      {"train_subset", d.train_subset},
      {"test_subset", d.test_subset},
      {"synthetic_train", d.synthetic_train},
      {"synthetic_test", d.synthetic_test},
      {"synthetic_seed", d.synthetic_seed},
      {"base_url", d.base_url},
      {"sha256", d.sha256},
      {"preprocessing", "pixels / 255"},
  };
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::kConfig, "config must be a JSON object");
  RunConfig config;
  TrainConfig& t = config.train;
  DataConfig& d = config.data;
  double rule_eta = t.rule.eta;
  std::string rule_id = t.rule.id();
  for (const auto& [key, value] : doc.items()) {
    if (key == "layer_sizes") t.layer_sizes = get_as<std::vector<std::size_t>>(value, key);
    else if (key == "meta_hidden") t.meta_hidden = get_as<std::size_t>(value, key);
    else if (key == "batch_size") t.batch_size = get_as<std::size_t>(value, key);
    else if (key == "epochs") t.epochs = get_as<std::size_t>(value, key);
    else if (key == "label_fraction") t.label_fraction = get_as<double>(value, key);
    else if (key == "eta_m") t.eta_m = get_as<double>(value, key);
    else if (key == "optimizer") {
      if (!value.is_object()) fail(ErrorKind::kConfig, "config key 'optimizer' must be an object");
      for (const auto& [okey, ovalue] : value.items()) {
        const std::string full = "optimizer." + okey;
        if (okey == "kind") {
          const auto name = get_as<std::string>(ovalue, full);
          const auto kind = parse_optimizer(name);
          if (!kind) fail(ErrorKind::kConfig, "config key 'optimizer.kind': unknown optimizer '" + name + "'");
          t.optimizer.kind = *kind;
        } else if (okey == "lr") t.optimizer.lr = get_as<double>(ovalue, full);
        else if (okey == "beta1") t.optimizer.beta1 = get_as<double>(ovalue, full);
        else if (okey == "beta2") t.optimizer.beta2 = get_as<double>(ovalue, full);
        else if (okey == "eps") t.optimizer.eps = get_as<double>(ovalue, full);
        else fail(ErrorKind::kConfig, "unknown config key '" + full + "'");
      }
    }
    else if (key == "seed") t.seed = get_as<std::uint64_t>(value, key);
    else if (key == "snapshot_schedule") t.snapshot_schedule = get_as<std::vector<std::size_t>>(value, key);
    else if (key == "mode") t.mode = mode_from(value, key);
    else if (key == "rule") rule_id = get_as<std::string>(value, key);
    else if (key == "rule_eta") rule_eta = get_as<double>(value, key);
    else if (key == "meta_zero_init") t.meta_zero_init = get_as<bool>(value, key);
    else if (key == "evals_per_epoch") t.evals_per_epoch = get_as<std::size_t>(value, key);
    else if (key == "snapshot_grid_points") t.snapshot_grid_points = get_as<std::size_t>(value, key);
    else if (key == "data_source") {
      d.source = get_as<std::string>(value, key);
      if (d.source != "fashion" && d.source != "synthetic") {
        fail(ErrorKind::kConfig, "config key 'data_source' must be 'fashion' or 'synthetic'");
      }
    }
    else if (key == "data_dir") d.data_dir = get_as<std::string>(value, key);
    else if (key == "train_subset") d.train_subset = get_as<std::size_t>(value, key);
    else if (key == "test_subset") d.test_subset = get_as<std::size_t>(value, key);
    else if (key == "synthetic_train") d.synthetic_train = get_as<std::size_t>(value, key);
    else if (key == "synthetic_test") d.synthetic_test = get_as<std::size_t>(value, key);
    else if (key == "synthetic_seed") d.synthetic_seed = get_as<std::uint64_t>(value, key);
    else if (key == "base_url") d.base_url = get_as<std::string>(value, key);
    else if (key == "sha256") d.sha256 = get_as<std::map<std::string, std::string>>(value, key);
    else if (key == "preprocessing") {}  // echoed for provenance only
    else fail(ErrorKind::kConfig, "unknown config key '" + key + "'");
  }
  const auto rule = parse_rule(rule_id, rule_eta);
  if (!rule) fail(ErrorKind::kConfig, "config key 'rule': unknown rule '" + rule_id + "'");
  t.rule = *rule;
  t.validate();
  return config;
}

std::pair<Dataset, Dataset> load_data(const DataConfig& config) {
  if (config.source == "synthetic") {
    return {make_synthetic(config.synthetic_train, config.synthetic_seed, Split::kTrain),
            make_synthetic(config.synthetic_test, config.synthetic_seed, Split::kTest)};
  }
  if (!fashion_mnist_present(config.data_dir)) {
    fail(ErrorKind::kIo, "Fashion-MNIST files not found in '" + config.data_dir +
                             "' (run `hat fetch` or set HAT_DATA_DIR)");
  }
  return {load_fashion_mnist(config.data_dir, Split::kTrain, config.train_subset),
          load_fashion_mnist(config.data_dir, Split::kTest, config.test_subset)};
}

// ---- ensembles --------------------------------------------------------------

void EnsembleSpec::validate() const {
  base.train.validate();
  if (runs < 1) fail(ErrorKind::kConfig, "ensemble needs runs >= 1");
  if (!seeds.empty() && seeds.size() != runs) {
    fail(ErrorKind::kConfig, "ensemble lists " + std::to_string(seeds.size()) + " seeds for " +
                                 std::to_string(runs) + " runs");
  }
  const auto s = resolved_seeds();
  if (std::set<std::uint64_t>(s.begin(), s.end()).size() != s.size()) {
    fail(ErrorKind::kConfig, "ensemble seeds must be distinct");
  }
  if (modes.empty()) fail(ErrorKind::kConfig, "ensemble needs at least one mode");
  if (label_fractions.empty()) fail(ErrorKind::kConfig, "ensemble needs at least one label fraction");
  for (double p : label_fractions) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kConfig, "label fractions must lie in [0, 1]");
  }
}

std::vector<std::uint64_t> EnsembleSpec::resolved_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out(runs);
  for (std::size_t r = 0; r < runs; ++r) out[r] = base.train.seed + r;
  return out;
}

json to_json(const EnsembleSpec& spec) {
  json modes = json::array();
  for (auto m : spec.modes) modes.push_back(std::string(mode_name(m)));
  return json{{"base", to_json(spec.base)},
              {"runs", spec.runs},
              {"seeds", spec.resolved_seeds()},
              {"modes", modes},
              {"label_fractions", spec.label_fractions},
              {"jobs", spec.jobs}};
}

EnsembleSpec ensemble_spec_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::kConfig, "ensemble spec must be a JSON object");
  EnsembleSpec spec;
  for (const auto& [key, value] : doc.items()) {
    if (key == "base") spec.base = run_config_from_json(value);
    else if (key == "runs") spec.runs = get_as<std::size_t>(value, key);
    else if (key == "seeds") spec.seeds = get_as<std::vector<std::uint64_t>>(value, key);
    else if (key == "modes") {
      spec.modes.clear();
      for (const auto& m : value) spec.modes.push_back(mode_from(m, "modes"));
    }
    else if (key == "label_fractions") spec.label_fractions = get_as<std::vector<double>>(value, key);
    else if (key == "jobs") spec.jobs = get_as<std::size_t>(value, key);
    else fail(ErrorKind::kConfig, "unknown ensemble key '" + key + "'");
  }
  spec.validate();
  return spec;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorKind::kUsage, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<CurvePoint> aggregate_curves(const std::vector<RunSummary>& runs) {
  std::map<std::pair<double, TrainMode>, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[{r.label_fraction, r.mode}].push_back(&r);

  std::vector<CurvePoint> out;
  for (const auto& [key, members] : groups) {
    std::size_t failed = 0;
    std::map<std::size_t, std::vector<double>> by_step;
    double steps_per_epoch = 1.0;
    for (const RunSummary* r : members) {
      if (r->failed) {
        ++failed;
        continue;
      }
      steps_per_epoch = r->steps_per_epoch;
      for (const auto& [step, acc] : r->test_accuracy) by_step[step].push_back(acc);
    }
    const std::size_t completed = members.size() - failed;
    for (const auto& [step, values] : by_step) {
      if (values.size() != completed) continue;  // only points every completed run reached
      out.push_back({key.first, key.second, step, static_cast<double>(step) / steps_per_epoch,
                     percentile(values, 0.5), percentile(values, 0.25), percentile(values, 0.75),
                     completed, failed});
    }
  }
  return out;
}

std::map<std::pair<double, TrainMode>, double> final_medians(const std::vector<RunSummary>& runs) {
  std::map<std::pair<double, TrainMode>, std::vector<double>> finals;
  for (const auto& r : runs) {
    if (!r.failed && !r.test_accuracy.empty()) {
      finals[{r.label_fraction, r.mode}].push_back(r.test_accuracy.back().second);
    }
  }
  std::map<std::pair<double, TrainMode>, double> out;
  for (const auto& [key, values] : finals) out[key] = percentile(values, 0.5);
  return out;
}

std::vector<RunSummary> run_ensemble(const EnsembleSpec& spec, const Dataset& train,
                                     const Dataset& test, const RunCallback& on_run) {
  spec.validate();
  const auto seeds = spec.resolved_seeds();
  std::vector<RunSummary> tasks;
  for (double p : spec.label_fractions)
    for (TrainMode mode : spec.modes)
      for (std::uint64_t seed : seeds) {
        RunSummary s;
        s.label_fraction = p;
        s.mode = mode;
        s.seed = seed;
        tasks.push_back(std::move(s));
      }

  const std::size_t per_epoch = (train.size() + spec.base.train.batch_size - 1) / spec.base.train.batch_size;
  std::exception_ptr error;
  std::mutex error_mutex;
  const int threads = spec.jobs ? static_cast<int>(spec.jobs) : omp_get_max_threads();

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t n = 0; n < tasks.size(); ++n) {
    RunSummary& task = tasks[n];
    try {
      TrainConfig config = spec.base.train;
      config.mode = task.mode;
      config.seed = task.seed;
      config.label_fraction = task.label_fraction;
      const RunRecord record = run_training(config, train, test);
      task.failed = record.failed;
      task.failure = record.failure;
      task.test_accuracy = record.test_accuracy();
      task.steps_per_epoch = static_cast<double>(per_epoch);
      task.meta = record.meta;
      if (on_run) on_run(task, record);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::map<std::pair<double, TrainMode>, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& t : tasks) {
    auto& [total, failed] = tally[{t.label_fraction, t.mode}];
    ++total;
    failed += t.failed;
  }
  for (const auto& [key, counts] : tally) {
    if (counts.first == counts.second) {
      fail(ErrorKind::kRunFailure, "all " + std::to_string(counts.first) + " runs failed for mode " +
                                       mode_label(key.second) + " at label fraction " +
                                       format_double(key.first));
    }
  }
  return tasks;
}

// ---- outputs ----------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "step,epoch,split,metric,value\n";
  for (const auto& r : record.rows) {
    out << r.step << ',' << format_double(r.epoch) << ',' << r.split << ',' << r.metric << ','
        << format_double(r.value) << '\n';
  }
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curves) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "label_fraction,mode,step,epoch,median,q25,q75,completed,failed\n";
  for (const auto& c : curves) {
    out << format_double(c.label_fraction) << ',' << mode_name(c.mode) << ',' << c.step << ','
        << format_double(c.epoch) << ',' << format_double(c.median) << ',' << format_double(c.q25)
        << ',' << format_double(c.q75) << ',' << c.completed << ',' << c.failed << '\n';
  }
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<RunSummary>& runs) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "label_fraction,mode,final_median_accuracy\n";
  for (const auto& [key, median] : final_medians(runs)) {
    out << format_double(key.first) << ',' << mode_name(key.second) << ',' << format_double(median) << '\n';
  }
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

}  // namespace hat
