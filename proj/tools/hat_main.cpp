// hat: command-line front end for training, ensembles, label sweeps,
// rule analysis and dataset download.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hat/analysis.hpp"
#include "hat/errors.hpp"
#include "hat/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsageExit = 1, kDataExit = 2, kRunExit = 3 };

int exit_code_for(hat::ErrorKind kind) {
  switch (kind) {
    case hat::ErrorKind::kUsage:
    case hat::ErrorKind::kConfig:
      return kUsageExit;
    case hat::ErrorKind::kData:
    case hat::ErrorKind::kFormat:
    case hat::ErrorKind::kLength:
    case hat::ErrorKind::kIo:
      return kDataExit;
    case hat::ErrorKind::kRunFailure:
    case hat::ErrorKind::kDimension:
      return kRunExit;
  }
  return kRunExit;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

hat::TrainMode mode_or_usage(const std::string& name) {
  const auto mode = hat::parse_mode(name);
  if (!mode) {
    hat::fail(hat::ErrorKind::kUsage,
              "unknown mode '" + name + "'; valid modes: " + join(hat::mode_names()));
  }
  return *mode;
}

// Flags shared by train / ensemble / sweep-labels. Unset ones leave the
// file value alone.
struct Overrides {
  std::string config;
  std::optional<std::string> mode;
  std::optional<std::string> rule;
  std::optional<double> rule_eta;
  std::optional<double> eta_m;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> label_fraction;
  std::optional<std::string> optimizer;
  std::optional<double> lr;
  std::optional<std::string> data_source;
  std::optional<std::string> data_dir;
  std::optional<std::size_t> train_subset;
  std::optional<std::size_t> test_subset;
  std::optional<std::size_t> meta_hidden;
  std::optional<std::string> base_url;
  std::vector<std::size_t> snapshots;
  bool meta_zero_init = false;

  void attach_data(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run config");
    app->add_option("--data-dir", data_dir);
  }

  void attach(CLI::App* app, bool with_mode) {
    attach_data(app);
    if (with_mode) {
      app->add_option("--mode", mode, "hat | control | frozen_meta | fixed_rule");
      app->add_option("--label-fraction", label_fraction, "fraction of labeled training examples");
      app->add_option("--seed", seed, "run seed");
    }
    app->add_option("--rule", rule, "fixed rule id for fixed_rule mode");
    app->add_option("--rule-eta", rule_eta, "rule scale for hebb / oja");
    app->add_option("--eta-m", eta_m, "scale of the forward-pass update");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--optimizer", optimizer, "adam | sgd");
    app->add_option("--lr", lr);
    app->add_option("--meta-hidden", meta_hidden);
    app->add_option("--data-source", data_source, "fashion | synthetic");
    app->add_option("--train-subset", train_subset, "0 keeps the whole split");
    app->add_option("--test-subset", test_subset);
    app->add_option("--snapshots", snapshots, "steps at which to snapshot the meta-learner");
    app->add_flag("--meta-zero-init", meta_zero_init, "start the meta-learner at M = 0");
  }

  // Precedence: flag > HAT_DATA_DIR > config file > default.
  hat::RunConfig resolve(const json& base) const {
    json doc = base;
    if (!config.empty()) doc = hat::read_json(config);
    if (!doc.is_object()) doc = json::object();
    if (const char* env = std::getenv("HAT_DATA_DIR"); env && *env) doc["data_dir"] = env;
    if (mode) {
      mode_or_usage(*mode);
      doc["mode"] = *mode;
    }
    if (rule) {
      if (!hat::parse_rule(*rule)) {
        hat::fail(hat::ErrorKind::kUsage,
                  "unknown rule '" + *rule + "'; valid rules: " + join(hat::rule_ids()));
      }
      doc["rule"] = *rule;
    }
    if (rule_eta) doc["rule_eta"] = *rule_eta;
    if (eta_m) doc["eta_m"] = *eta_m;
    if (seed) doc["seed"] = *seed;
    if (epochs) doc["epochs"] = *epochs;
    if (batch_size) doc["batch_size"] = *batch_size;
    if (label_fraction) doc["label_fraction"] = *label_fraction;
    if (optimizer) doc["optimizer"]["kind"] = *optimizer;
    if (lr) doc["optimizer"]["lr"] = *lr;
    if (meta_hidden) doc["meta_hidden"] = *meta_hidden;
    if (data_source) doc["data_source"] = *data_source;
    if (data_dir) doc["data_dir"] = *data_dir;
    if (base_url) doc["base_url"] = *base_url;
    if (train_subset) doc["train_subset"] = *train_subset;
    if (test_subset) doc["test_subset"] = *test_subset;
    if (!snapshots.empty()) doc["snapshot_schedule"] = snapshots;
    if (meta_zero_init) doc["meta_zero_init"] = true;
    return hat::run_config_from_json(doc);
  }
};

std::string fraction_tag(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", p);
  return buf;
}

bool uses_meta(hat::TrainMode mode) {
  return mode == hat::TrainMode::kHat || mode == hat::TrainMode::kFrozenMeta;
}

void write_run_outputs(const fs::path& dir, const hat::RunConfig& config, const hat::RunRecord& record) {
  fs::create_directories(dir);
  hat::write_json(dir / "config.json", hat::to_json(config));
  hat::write_metrics_csv(dir / "metrics.csv", record);
  hat::save_learner(dir / "learner.hatw", record.learner);
  if (uses_meta(config.train.mode)) hat::save_meta(dir / "meta.hatw", record.meta);
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Overrides& flags, const fs::path& out) {
  const hat::RunConfig config = flags.resolve(json::object());
  const auto [train, test] = hat::load_data(config.data);
  fs::create_directories(out / "snapshots");
  hat::write_json(out / "config.json", hat::to_json(config));

  const auto record = hat::run_training(config.train, train, test, [&](const hat::RuleSnapshot& s) {
    const std::string tag = std::to_string(s.step);
    hat::save_meta(out / "snapshots" / ("meta_step_" + tag + ".hatw"), s.meta);
    hat::write_rule_table_csv(out / "snapshots" / ("rule_table_step_" + tag + ".csv"), s.table);
  });
  for (auto step : record.missing_snapshots) std::cerr << "warning: snapshot at step " << step << " could not be written\n";
  write_run_outputs(out, config, record);

  const auto acc = record.test_accuracy();
  if (record.failed) {
    std::cerr << "hat train: run failed at " << record.failure << '\n';
    return kRunExit;
  }
  std::cout << "mode=" << hat::mode_name(config.train.mode) << " steps=" << record.supervised_steps + record.unsupervised_steps
            << " final_test_accuracy=" << (acc.empty() ? 0.0 : acc.back().second) << '\n'
            << "wrote " << out.string() << '\n';
  return kOk;
}

// ---- ensemble / sweep-labels -------------------------------------------------

struct EnsembleFlags {
  std::string spec;
  std::optional<std::size_t> runs;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> modes;
  std::vector<double> fractions;
  std::optional<std::size_t> jobs;
  bool keep_runs = true;

  void attach(CLI::App* app, bool sweep) {
    app->add_option("-s,--spec", spec, "JSON ensemble spec");
    app->add_option("--runs", runs, "runs per mode");
    app->add_option("--seeds", seeds);
    app->add_option("--modes", modes);
    app->add_option(sweep ? "--fractions" : "--label-fractions", fractions, "label fractions");
    app->add_option("-j,--jobs", jobs, "concurrent runs (0 = all cores)");
    app->add_flag("!--no-run-files", keep_runs, "skip per-run metrics and checkpoints");
  }
};

hat::EnsembleSpec resolve_spec(const Overrides& base_flags, const EnsembleFlags& flags) {
  json doc = flags.spec.empty() ? json::object() : hat::read_json(flags.spec);
  if (!doc.is_object()) hat::fail(hat::ErrorKind::kConfig, "ensemble spec must be a JSON object");
  const json base = doc.contains("base") ? doc["base"] : json::object();
  doc["base"] = hat::to_json(base_flags.resolve(base));
  if (flags.runs) doc["runs"] = *flags.runs;
  if (!flags.seeds.empty()) doc["seeds"] = flags.seeds;
  if (!flags.modes.empty()) {
    for (const auto& m : flags.modes) mode_or_usage(m);
    doc["modes"] = flags.modes;
  }
  if (!flags.fractions.empty()) doc["label_fractions"] = flags.fractions;
  if (flags.jobs) doc["jobs"] = *flags.jobs;
  if (flags.runs && flags.seeds.empty()) doc.erase("seeds");
  return hat::ensemble_spec_from_json(doc);
}

int cmd_ensemble(const Overrides& base_flags, const EnsembleFlags& flags, const fs::path& out, bool sweep) {
  const hat::EnsembleSpec spec = resolve_spec(base_flags, flags);
  const auto [train, test] = hat::load_data(spec.base.data);
  fs::create_directories(out);
  hat::write_json(out / "config.json", hat::to_json(spec));

  const auto runs = hat::run_ensemble(spec, train, test, [&](const hat::RunSummary& s, const hat::RunRecord& r) {
    if (!flags.keep_runs) return;
    hat::RunConfig config = spec.base;
    config.train.mode = s.mode;
    config.train.seed = s.seed;
    config.train.label_fraction = s.label_fraction;
    write_run_outputs(out / "runs" /
                          ("p" + fraction_tag(s.label_fraction) + "_" + std::string(hat::mode_name(s.mode)) +
                           "_s" + std::to_string(s.seed)),
                      config, r);
  });

  hat::write_curves_csv(out / "curves.csv", hat::aggregate_curves(runs));
  if (sweep) hat::write_sweep_csv(out / "sweep.csv", runs);

  std::ofstream listing(out / "runs.csv");
  listing << "label_fraction,mode,seed,failed,final_accuracy,failure\n";
  std::size_t failed = 0;
  for (const auto& r : runs) {
    failed += r.failed;
    listing << fraction_tag(r.label_fraction) << ',' << hat::mode_name(r.mode) << ',' << r.seed << ','
            << r.failed << ',' << (r.test_accuracy.empty() ? 0.0 : r.test_accuracy.back().second) << ",\""
            << r.failure << "\"\n";
  }
  for (const auto& [key, median] : hat::final_medians(runs)) {
    std::cout << "label_fraction=" << fraction_tag(key.first) << " mode=" << hat::mode_name(key.second)
              << " final_median_accuracy=" << median << '\n';
  }
  if (failed) std::cerr << failed << " of " << runs.size() << " runs failed and were excluded from medians\n";
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

// ---- analyze ----------------------------------------------------------------

struct AnalyzeFlags {
  std::vector<std::string> metas;
  std::string rule;
  double rule_eta = 0.01;
  std::string snapshots;
  std::size_t points = 41;
  std::vector<double> vi_range{0.0, 1.0};
  std::vector<double> w_range{-3.0, 3.0};
  std::vector<double> vj_range{0.0, 1.0};
  double phase_multiple = 3.0;
  bool svg = false;
};

std::vector<std::pair<std::size_t, fs::path>> snapshot_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) hat::fail(hat::ErrorKind::kIo, "snapshot directory not found: " + dir.string());
  std::vector<std::pair<std::size_t, fs::path>> out;
  const std::string prefix = "meta_step_";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".hatw") continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 5);
    try {
      out.emplace_back(std::stoull(digits), entry.path());
    } catch (const std::exception&) {
      continue;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_fit_files(const fs::path& out, const hat::RuleTable& table, bool svg) {
  hat::write_rule_table_csv(out / "rule_table.csv", table);
  hat::write_summary_csv(out / "analysis_summary.csv", table);

  std::ofstream flags(out / "analysis_flags.csv");
  flags << "axis,zero_variance\n";
  for (auto axis : {hat::RuleAxis::kVi, hat::RuleAxis::kW, hat::RuleAxis::kVj}) {
    flags << hat::axis_name(axis) << ',' << hat::variance_explained(table, axis).zero_variance << '\n';
  }

  const auto joint = hat::joint_fit(table);
  std::ofstream jf(out / "joint_fit.csv");
  jf.precision(17);
  jf << "r2,intercept,coef_v_i,coef_w,coef_v_j,zero_variance\n"
     << joint.r2 << ',' << joint.intercept << ',' << joint.coefficients[0] << ',' << joint.coefficients[1] << ','
     << joint.coefficients[2] << ',' << joint.zero_variance << '\n';

  if (svg) {
    for (auto axis : {hat::RuleAxis::kVi, hat::RuleAxis::kW, hat::RuleAxis::kVj}) {
      hat::write_scatter_svg(out / ("scatter_" + std::string(hat::axis_name(axis)) + ".svg"), table, axis);
    }
  }
  std::cout.precision(6);
  for (auto axis : {hat::RuleAxis::kVi, hat::RuleAxis::kW, hat::RuleAxis::kVj}) {
    const auto fit = hat::variance_explained(table, axis);
    std::cout << "R2(" << hat::axis_name(axis) << ")=" << fit.r2 << " slope=" << fit.slope
              << (fit.zero_variance ? " [zero variance]" : "") << '\n';
  }
}

hat::GridAxes axes_from(const AnalyzeFlags& f) {
  auto range = [](const std::vector<double>& r, const char* name) {
    if (r.size() != 2) hat::fail(hat::ErrorKind::kUsage, std::string(name) + " takes two values: LO HI");
    return std::pair{r[0], r[1]};
  };
  const auto [a0, a1] = range(f.vi_range, "--vi-range");
  const auto [b0, b1] = range(f.w_range, "--w-range");
  const auto [c0, c1] = range(f.vj_range, "--vj-range");
  hat::GridAxes axes{hat::linspace(a0, a1, f.points), hat::linspace(b0, b1, f.points),
                     hat::linspace(c0, c1, f.points)};
  axes.validate();
  return axes;
}

int cmd_analyze(const AnalyzeFlags& f, const fs::path& out) {
  const int sources = !f.metas.empty() + !f.rule.empty() + !f.snapshots.empty();
  if (sources == 0) {
    hat::fail(hat::ErrorKind::kUsage, "analyze needs meta checkpoints, --rule or --snapshots");
  }
  if (!f.rule.empty() && !f.metas.empty()) {
    hat::fail(hat::ErrorKind::kUsage, "give either meta checkpoints or --rule, not both");
  }
  const hat::GridAxes axes = axes_from(f);
  fs::create_directories(out);
  hat::write_json(out / "config.json", json{{"metas", f.metas},
                                            {"rule", f.rule},
                                            {"rule_eta", f.rule_eta},
                                            {"snapshots", f.snapshots},
                                            {"grid_points", f.points},
                                            {"vi_range", f.vi_range},
                                            {"w_range", f.w_range},
                                            {"vj_range", f.vj_range},
                                            {"phase_multiple", f.phase_multiple},
                                            {"svg", f.svg}});

  if (!f.rule.empty()) {
    const auto rule = hat::parse_rule(f.rule, f.rule_eta);
    if (!rule) hat::fail(hat::ErrorKind::kUsage, "unknown rule '" + f.rule + "'; valid rules: " + join(hat::rule_ids()));
    auto table = hat::grid_eval(rule->as_function(), axes);
    table.provenance = "rule " + f.rule;
    write_fit_files(out, table, f.svg);
  } else if (!f.metas.empty()) {
    std::vector<hat::MetaLearner> metas;
    for (const auto& path : f.metas) metas.push_back(hat::load_meta(path));
    if (metas.size() > 1) {
      fs::create_directories(out / "tables");
      for (std::size_t k = 0; k < metas.size(); ++k) {
        auto table = hat::grid_eval(metas[k], axes);
        table.provenance = f.metas[k];
        hat::write_rule_table_csv(out / "tables" / ("meta_" + std::to_string(k) + ".csv"), table);
      }
    }
    auto table = hat::pointwise_mean(metas, axes);
    table.provenance = "pointwise mean of " + std::to_string(metas.size()) + " meta-learners";
    write_fit_files(out, table, f.svg);
  }

  if (!f.snapshots.empty()) {
    const auto files = snapshot_files(f.snapshots);
    if (files.empty()) hat::fail(hat::ErrorKind::kIo, "no meta_step_<t>.hatw files in " + f.snapshots);
    std::vector<hat::RuleTable> tables;
    for (const auto& [step, path] : files) {
      tables.push_back(hat::grid_eval(hat::load_meta(path), axes));
      tables.back().t = static_cast<double>(step);
    }
    if (f.metas.empty() && f.rule.empty()) write_fit_files(out, tables.back(), f.svg);
    if (tables.size() >= 2) {
      const auto scan = hat::phase_scan(tables, f.phase_multiple);
      std::ofstream ps(out / "phase_scan.csv");
      ps.precision(17);
      ps << "t_from,t_to,distance,signed_distance,flagged,r2_v_i,r2_w,r2_v_j\n";
      for (std::size_t k = 0; k < scan.intervals.size(); ++k) {
        const auto& iv = scan.intervals[k];
        const auto& fit = scan.fits[k + 1];
        ps << iv.t_from << ',' << iv.t_to << ',' << iv.distance.mean_abs << ',' << iv.distance.signed_mean << ','
           << iv.flagged << ',' << fit[0].r2 << ',' << fit[1].r2 << ',' << fit[2].r2 << '\n';
      }
      std::size_t flagged = 0;
      for (const auto& iv : scan.intervals) flagged += iv.flagged;
      std::cout << "phase scan: " << scan.intervals.size() << " intervals, " << flagged << " flagged (threshold "
                << scan.threshold << ")\n";
    }
  }
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

// ---- fetch ------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    hat::fail(hat::ErrorKind::kIo, "SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    char b[3];
    std::snprintf(b, sizeof b, "%02x", digest[i]);
    hex << b;
  }
  return hex.str();
}

// "http://host:port/a/b" -> ("http://host:port", "/a/b")
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) hat::fail(hat::ErrorKind::kUsage, "base_url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

int cmd_fetch(const Overrides& flags, const std::vector<std::string>& hashes, bool force) {
  hat::RunConfig config = flags.resolve(json::object());
  for (const auto& h : hashes) {
    const auto eq = h.find('=');
    if (eq == std::string::npos) hat::fail(hat::ErrorKind::kUsage, "--sha256 expects FILE=HEX, got " + h);
    config.data.sha256[h.substr(0, eq)] = h.substr(eq + 1);
  }
  const fs::path dir = config.data.data_dir;
  fs::create_directories(dir);
  const auto [origin, prefix] = split_url(config.data.base_url);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(300);

  for (auto split : {hat::Split::kTrain, hat::Split::kTest}) {
    for (const auto& base : {hat::fashion_images_file(split), hat::fashion_labels_file(split)}) {
      const std::string name = base + ".gz";
      const fs::path target = dir / name;
      const auto expected = config.data.sha256.find(name);
      if (fs::exists(target) && !force) {
        std::cout << name << ": present, skipping\n";
        continue;
      }
      std::cout << "fetching " << origin << prefix << "/" << name << '\n';
      auto res = client.Get(prefix + "/" + name);
      if (!res) {
        hat::fail(hat::ErrorKind::kIo, "download of " + name + " failed: " + httplib::to_string(res.error()));
      }
      if (res->status != 200) {
        hat::fail(hat::ErrorKind::kIo, "download of " + name + " returned HTTP " + std::to_string(res->status));
      }
      const std::string digest = sha256_hex(res->body);
      if (expected == config.data.sha256.end()) {
        std::cerr << "warning: no sha256 configured for " << name << "; got " << digest << '\n';
      } else if (expected->second != digest) {
        hat::fail(hat::ErrorKind::kData,
                  name + ": sha256 mismatch, expected " + expected->second + " found " + digest);
      }
      std::ofstream file(target, std::ios::binary);
      file.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
      if (!file) hat::fail(hat::ErrorKind::kIo, "cannot write " + target.string());
    }
  }
  // Parse once so a bad download is reported here rather than mid-run.
  for (auto split : {hat::Split::kTrain, hat::Split::kTest}) {
    const auto data = hat::load_fashion_mnist(dir, split);
    std::cout << hat::split_name(split) << ": " << data.size() << " examples\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hebbian-augmented training: experiments and rule analysis", "hat"};
  app.require_subcommand(1);

  Overrides train_flags, ens_flags, sweep_flags, fetch_flags;
  EnsembleFlags ens_extra, sweep_extra;
  AnalyzeFlags analyze_flags;
  std::string train_out = "out/train", ens_out = "out/ensemble", sweep_out = "out/sweep",
              analyze_out = "out/analyze";
  std::vector<std::string> hashes;
  bool force = false;

  auto* fetch = app.add_subcommand("fetch", "download Fashion-MNIST into data_dir");
  fetch_flags.attach_data(fetch);
  fetch->add_option("--base-url", fetch_flags.base_url, "download location overriding the config");
  fetch->add_option("--sha256", hashes, "FILE=HEX expected digest, repeatable");
  fetch->add_flag("--force", force, "download even if the file exists");

  auto* train = app.add_subcommand("train", "run one training");
  train_flags.attach(train, true);
  train->add_option("-o,--out", train_out, "output directory");

  auto* ensemble = app.add_subcommand("ensemble", "run seeds x modes and aggregate median curves");
  ens_flags.attach(ensemble, false);
  ens_extra.attach(ensemble, false);
  ensemble->add_option("-o,--out", ens_out, "output directory");

  auto* sweep = app.add_subcommand("sweep-labels", "ensemble per label fraction");
  sweep_flags.attach(sweep, false);
  sweep_extra.attach(sweep, true);
  sweep->add_option("-o,--out", sweep_out, "output directory");

  auto* analyze = app.add_subcommand("analyze", "grid analysis of learned or fixed rules");
  analyze->add_option("metas", analyze_flags.metas, "meta-learner checkpoints (.hatw)");
  analyze->add_option("--rule", analyze_flags.rule, "fixed rule id instead of checkpoints");
  analyze->add_option("--rule-eta", analyze_flags.rule_eta);
  analyze->add_option("--snapshots", analyze_flags.snapshots, "directory of meta_step_<t>.hatw");
  analyze->add_option("--grid-points", analyze_flags.points)->check(CLI::Range(2, 1000));
  analyze->add_option("--vi-range", analyze_flags.vi_range)->expected(2);
  analyze->add_option("--w-range", analyze_flags.w_range)->expected(2);
  analyze->add_option("--vj-range", analyze_flags.vj_range)->expected(2);
  analyze->add_option("--phase-multiple", analyze_flags.phase_multiple);
  analyze->add_flag("--svg", analyze_flags.svg, "write scatter plots");
  analyze->add_option("-o,--out", analyze_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageExit;
  }

  try {
    if (*fetch) return cmd_fetch(fetch_flags, hashes, force);
    if (*train) return cmd_train(train_flags, train_out);
    if (*ensemble) return cmd_ensemble(ens_flags, ens_extra, ens_out, false);
    if (*sweep) return cmd_ensemble(sweep_flags, sweep_extra, sweep_out, true);
    if (*analyze) return cmd_analyze(analyze_flags, analyze_out);
  } catch (const hat::Error& e) {
    std::cerr << "hat: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "hat: " << e.what() << '\n';
    return kRunExit;
  }
  return kOk;
}
