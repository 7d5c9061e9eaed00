#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "hat/errors.hpp"
#include "hat/experiment.hpp"

using namespace hat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

EnsembleSpec tiny_spec() {
  EnsembleSpec s;
  s.base.train.layer_sizes = {784, 8, 10};
  s.base.train.meta_hidden = 3;
  s.base.train.batch_size = 20;
  s.base.train.epochs = 1;
  s.base.train.evals_per_epoch = 2;
  s.base.data.source = "synthetic";
  s.runs = 3;
  s.jobs = 1;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("hat_exp_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(RunConfigJson, UnknownKeyIsNamed) {
  try {
    run_config_from_json(json{{"epochs", 2}, {"learning_rat", 0.1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos) << e.what();
  }
}

TEST(RunConfigJson, NestedUnknownKeyIsNamed) {
  try {
    run_config_from_json(json{{"optimizer", {{"momentum", 0.9}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("optimizer.momentum"), std::string::npos) << e.what();
  }
}

TEST(RunConfigJson, WrongTypeAndBadValuesAreConfigErrors) {
  for (const json& doc : {json{{"epochs", "three"}}, json{{"mode", "hybrid"}}, json{{"rule", "bcm"}},
                          json{{"label_fraction", 1.5}}, json{{"data_source", "mnist"}}, json::array()}) {
    try {
      run_config_from_json(doc);
      ADD_FAILURE() << doc.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfig) << doc.dump();
    }
  }
}

TEST(RunConfigJson, RoundTripMaterializesDefaults) {
  RunConfig c;
  c.train.epochs = 3;
  c.train.mode = TrainMode::kFixedRule;
  c.train.rule = *parse_rule("oja", 0.25);
  c.train.snapshot_schedule = {0, 10, 100};
  c.data.sha256["a.gz"] = "ff";
  const json doc = to_json(c);
  EXPECT_TRUE(doc.contains("eta_m"));
  EXPECT_TRUE(doc.contains("preprocessing"));
  EXPECT_EQ(to_json(run_config_from_json(doc)), doc);
}

TEST(EnsembleSpecJson, RoundTripAndValidation) {
  EnsembleSpec s = tiny_spec();
  s.modes = {TrainMode::kHat, TrainMode::kFixedRule};
  s.label_fractions = {0.2, 1.0};
  const json doc = to_json(s);
  EXPECT_EQ(to_json(ensemble_spec_from_json(doc)), doc);
  EXPECT_EQ(doc["seeds"], json({0, 1, 2}));

  json bad = doc;
  bad["seeds"] = {1, 1, 2};
  EXPECT_THROW(ensemble_spec_from_json(bad), Error);
  bad["seeds"] = {1, 2};
  EXPECT_THROW(ensemble_spec_from_json(bad), Error);
  bad = doc;
  bad["replicas"] = 4;
  EXPECT_THROW(ensemble_spec_from_json(bad), Error);
}

TEST(Percentile, MatchesBruteForceInterpolation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n : {1u, 2u, 5u, 10u, 11u}) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      // rank q(n-1) between neighbours
      const double pos = q * (n - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const double expect = lo + 1 < n ? sorted[lo] + (pos - lo) * (sorted[lo + 1] - sorted[lo]) : sorted[lo];
      EXPECT_DOUBLE_EQ(percentile(v, q), expect) << n << ' ' << q;
    }
  }
  EXPECT_EQ(percentile({3, 1, 2, 4}, 0.5), 2.5);
  EXPECT_THROW(percentile({}, 0.5), Error);
}

TEST(Aggregate, SingleRunMedianIsThatRun) {
  RunSummary r;
  r.test_accuracy = {{0, 0.1}, {5, 0.6}, {10, 0.8}};
  r.steps_per_epoch = 10;
  const auto curves = aggregate_curves({r});
  ASSERT_EQ(curves.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(curves[k].step, r.test_accuracy[k].first);
    EXPECT_EQ(curves[k].median, r.test_accuracy[k].second);
    EXPECT_EQ(curves[k].q25, curves[k].median);
    EXPECT_EQ(curves[k].q75, curves[k].median);
  }
  EXPECT_EQ(curves[1].epoch, 0.5);
}

TEST(Aggregate, FailedRunsExcludedAndCounted) {
  RunSummary a, b, c;
  a.test_accuracy = {{0, 0.2}};
  b.test_accuracy = {{0, 0.4}};
  c.failed = true;
  c.test_accuracy = {{0, 0.9}};
  const auto curves = aggregate_curves({a, b, c});
  ASSERT_EQ(curves.size(), 1u);
  EXPECT_DOUBLE_EQ(curves[0].median, 0.3);
  EXPECT_EQ(curves[0].completed, 2u);
  EXPECT_EQ(curves[0].failed, 1u);
}

TEST(Ensemble, RunsAreIsolatedFromConcurrency) {
  EnsembleSpec serial = tiny_spec(), parallel = tiny_spec();
  parallel.jobs = 3;
  const Dataset train = make_synthetic(100, 1), test = make_synthetic(40, 1, Split::kTest);
  const auto a = run_ensemble(serial, train, test), b = run_ensemble(parallel, train, test);
  ASSERT_EQ(a.size(), 6u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].seed, b[k].seed);
    EXPECT_EQ(a[k].mode, b[k].mode);
    EXPECT_EQ(a[k].test_accuracy, b[k].test_accuracy);
    EXPECT_EQ(a[k].meta.kernel1, b[k].meta.kernel1);
  }
  // a run in an ensemble equals the same run alone
  TrainConfig alone = serial.base.train;
  alone.seed = a[1].seed;
  alone.mode = a[1].mode;
  EXPECT_EQ(run_training(alone, train, test).test_accuracy(), a[1].test_accuracy);
}

TEST(Ensemble, AllRunsFailedIsRunFailure) {
  EnsembleSpec s = tiny_spec();
  s.runs = 2;
  s.modes = {TrainMode::kFixedRule};
  s.base.train.rule = *parse_rule("linear2vj");
  s.base.train.eta_m = 1e308;
  try {
    run_ensemble(s, make_synthetic(60, 2), make_synthetic(20, 2, Split::kTest));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRunFailure);
  }
}

TEST(Outputs, CurvesSweepAndMetricsCsv) {
  EnsembleSpec s = tiny_spec();
  s.runs = 2;
  s.label_fractions = {0.5, 1.0};
  const Dataset train = make_synthetic(60, 3), test = make_synthetic(20, 3, Split::kTest);
  RunRecord first;
  bool have_first = false;
  const auto runs = run_ensemble(s, train, test, [&](const RunSummary&, const RunRecord& rec) {
    if (!have_first) first = rec, have_first = true;
  });
  const fs::path curves = temp_file("curves.csv"), sweep = temp_file("sweep.csv"), metrics = temp_file("m.csv");
  write_curves_csv(curves, aggregate_curves(runs));
  write_sweep_csv(sweep, runs);
  write_metrics_csv(metrics, first);

  EXPECT_EQ(slurp(curves).substr(0, slurp(curves).find('\n')),
            "label_fraction,mode,step,epoch,median,q25,q75,completed,failed");
  const std::string sw = slurp(sweep);
  EXPECT_EQ(sw.substr(0, sw.find('\n')), "label_fraction,mode,final_median_accuracy");
  EXPECT_EQ(std::count(sw.begin(), sw.end(), '\n'), 5);  // header + 2 fractions x 2 modes
  EXPECT_NE(sw.find("0.5,hat,"), std::string::npos);
  EXPECT_NE(sw.find("1,control,"), std::string::npos);
  const std::string m = slurp(metrics);
  EXPECT_EQ(m.substr(0, m.find('\n')), "step,epoch,split,metric,value");
  EXPECT_NE(m.find(",test,accuracy,"), std::string::npos);
  for (const auto& p : {curves, sweep, metrics}) fs::remove(p);
}

TEST(Outputs, JsonFileRoundTripAndParseError) {
  const fs::path p = temp_file("c.json");
  write_json(p, to_json(RunConfig{}));
  EXPECT_EQ(read_json(p), to_json(RunConfig{}));
  std::ofstream(p) << "{ not json";
  try {
    read_json(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  fs::remove(p);
  try {
    read_json(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(LoadData, MissingFashionIsIoErrorWithHint) {
  DataConfig d;
  d.data_dir = "/nonexistent/hat";
  try {
    load_data(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find("HAT_DATA_DIR"), std::string::npos);
  }
}
