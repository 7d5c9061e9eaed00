#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <random>

#include <unistd.h>

#include "hat/errors.hpp"
#include "hat/net.hpp"
#include "support.hpp"

using namespace hat;
using hat::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// The per-synapse loop the conv pipeline must reproduce.
Tensor naive_meta_delta(const MetaLearner& meta, const Tensor& vin, const Tensor& w, const Tensor& vout,
                        double eta) {
  const std::size_t B = vin.dim(0), ni = vin.dim(1), no = w.dim(0);
  Tensor out({no, ni});
  for (std::size_t j = 0; j < no; ++j)
    for (std::size_t i = 0; i < ni; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b) acc += meta(vin.at(b, i), w.at(j, i), vout.at(b, j));
      out.at(j, i) = eta * acc / static_cast<double>(B);
    }
  return out;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("hat_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(BuildLearner, Shapes) {
  const std::vector<std::size_t> sizes{784, 183, 10};
  const LearnerState l = build_learner(sizes, 1);
  ASSERT_EQ(l.num_layers(), 2u);
  EXPECT_EQ(l.weights[0].shape(), (Shape{183, 784}));
  EXPECT_EQ(l.weights[1].shape(), (Shape{10, 183}));
  EXPECT_EQ(l.biases[0].shape(), (Shape{183, 1}));
  const double bound = 1.0 / std::sqrt(784.0);
  for (double v : l.weights[0].values()) EXPECT_LE(std::abs(v), bound);
}

TEST(BuildLearner, TwoByTwo) {
  const std::vector<std::size_t> sizes{2, 2};
  const LearnerState l = build_learner(sizes, 1);
  EXPECT_EQ(l.weights.size(), 1u);
  EXPECT_EQ(l.weights[0].shape(), (Shape{2, 2}));
  EXPECT_EQ(l.biases[0].shape(), (Shape{2, 1}));
}

TEST(BuildLearner, DeterministicAndValidated) {
  const std::vector<std::size_t> sizes{5, 4, 3};
  EXPECT_EQ(build_learner(sizes, 9).weights, build_learner(sizes, 9).weights);
  EXPECT_NE(build_learner(sizes, 9).weights, build_learner(sizes, 10).weights);
  const std::vector<std::size_t> one{5};
  try {
    build_learner(one, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(BuildMeta, Shapes) {
  const MetaLearner m = build_meta(100, 3);
  EXPECT_EQ(m.kernel1.shape(), (Shape{100, 3}));
  EXPECT_EQ(m.kernel2.shape(), (Shape{1, 100}));
  const MetaLearner small = build_meta(1, 3);
  EXPECT_EQ(small.kernel1.shape(), (Shape{1, 3}));
  EXPECT_EQ(small.kernel2.shape(), (Shape{1, 1}));
  EXPECT_EQ(build_meta(7, 4).kernel1, build_meta(7, 4).kernel1);
  try {
    build_meta(0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(BuildMeta, ZeroVariantIsZeroFunction) {
  const MetaLearner z = MetaLearner::zeros(5);
  for (double a : {-1.0, 0.0, 0.3})
    for (double b : {-3.0, 2.0}) EXPECT_EQ(z(a, b, 0.9), 0.0);
}

TEST(MetaDelta, FullLayerShape) {
  Tape tape;
  const MetaVars mv = bind(tape, build_meta(2, 1), false);
  const Var d = meta_delta(mv, tape.constant(Tensor({50, 784}, 0.5)), tape.constant(Tensor({183, 784}, 0.1)),
                           tape.constant(Tensor({50, 183}, 0.5)), 0.01);
  EXPECT_EQ(d.shape(), (Shape{183, 784}));
}

TEST(MetaDelta, ZeroMetaGivesExactZero) {
  Tape tape;
  const MetaVars mv = bind(tape, MetaLearner::zeros(4), false);
  const Var d = meta_delta(mv, tape.constant(random_tensor({3, 5}, 1)), tape.constant(random_tensor({4, 5}, 2)),
                           tape.constant(random_tensor({3, 4}, 3)), 0.7);
  for (double v : d.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(MetaDelta, SingleSynapseEqualsScalarMlp) {
  const MetaLearner m = build_meta(5, 4);
  Tape tape;
  const Var d = meta_delta(bind(tape, m, false), tape.constant(Tensor::matrix({{0.3}})),
                           tape.constant(Tensor::matrix({{-1.2}})), tape.constant(Tensor::matrix({{0.8}})), 0.25);
  double direct = m.bias2[0];
  for (std::size_t h = 0; h < 5; ++h) {
    const double z = m.kernel1.at(h, 0) * 0.3 + m.kernel1.at(h, 1) * -1.2 + m.kernel1.at(h, 2) * 0.8 + m.bias1[h];
    direct += m.kernel2[h] * std::max(0.0, z);
  }
  EXPECT_NEAR(d.value().item(), 0.25 * direct, 1e-15);
}

TEST(MetaDelta, ConvPipelineFusedAndNaiveAgree) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 10; ++s) {
    const std::size_t B = 1 + rng() % 8, ni = 1 + rng() % 20, no = 1 + rng() % 16;
    const MetaLearner m = build_meta(1 + rng() % 12, 100 + s);
    const Tensor vin = random_tensor({B, ni}, 200 + s, 0, 1), w = random_tensor({no, ni}, 300 + s, -3, 3),
                 vout = random_tensor({B, no}, 400 + s, 0, 1);
    Tape tape;
    const MetaVars mv = bind(tape, m, false);
    const Tensor conv = meta_delta_conv(mv, tape.constant(vin), tape.constant(w), tape.constant(vout), 0.9).value();
    const Tensor fused = meta_delta(mv, tape.constant(vin), tape.constant(w), tape.constant(vout), 0.9).value();
    const Tensor naive = naive_meta_delta(m, vin, w, vout, 0.9);
    EXPECT_LT(max_abs_diff(conv, naive), 1e-12);
    EXPECT_LT(max_abs_diff(fused, naive), 1e-12);
  }
}

TEST(MetaDelta, GradientsMatchFiniteDifferencesBothPaths) {
  for (int s = 0; s < 20; ++s) {
    const MetaLearner m = build_meta(3 + s % 4, 500 + s);
    const std::size_t B = 1 + s % 3, ni = 2 + s % 3, no = 1 + s % 4;
    const std::vector<Tensor> inputs{random_tensor({B, ni}, 600 + s, 0, 1), random_tensor({no, ni}, 700 + s),
                                     random_tensor({B, no}, 800 + s, 0, 1), m.kernel1, m.bias1, m.kernel2, m.bias2};
    for (bool conv : {false, true}) {
      const double err = hat::testing::op_gradient_error(
          [conv](const auto& v) {
            const MetaVars mv{v[3], v[4], v[5], v[6]};
            return conv ? meta_delta_conv(mv, v[0], v[1], v[2], 0.6) : meta_delta(mv, v[0], v[1], v[2], 0.6);
          },
          inputs, s);
      EXPECT_LT(err, 1e-6) << (conv ? "conv" : "fused") << " seed " << s;
    }
  }
}

TEST(RuleDelta, GradientsMatchFiniteDifferences) {
  for (const auto& id : rule_ids()) {
    const LocalRule rule = *parse_rule(id, 0.8);
    for (int s = 0; s < 20; ++s) {
      const std::size_t B = 1 + s % 3, ni = 2 + s % 3, no = 1 + s % 4;
      const double err = hat::testing::op_gradient_error(
          [rule](const auto& v) { return synapse_rule_delta(rule, v[0], v[1], v[2], 0.4); },
          {random_tensor({B, ni}, 900 + s, 0, 1), random_tensor({no, ni}, 1000 + s),
           random_tensor({B, no}, 1100 + s, 0, 1)},
          s);
      EXPECT_LT(err, 1e-6) << id << " seed " << s;
    }
  }
}

TEST(MetaDelta, NonFiniteEtaRejected) {
  Tape tape;
  const MetaVars mv = bind(tape, build_meta(2, 1), false);
  EXPECT_THROW(meta_delta(mv, tape.constant(Tensor({1, 1})), tape.constant(Tensor({1, 1})),
                          tape.constant(Tensor({1, 1})), std::nan("")),
               Error);
}

TEST(LayerForwardHat, ZeroMetaIsPlainLayer) {
  const std::vector<std::size_t> sizes{6, 4, 3};
  LearnerState l = build_learner(sizes, 2);
  const LearnerState before = l;
  const Tensor x = random_tensor({5, 6}, 3, 0, 1);
  Tape tape;
  const LearnerVars lv = bind(tape, l, false);
  const Var out = forward_hat(l, lv, SynapseUpdate{bind(tape, MetaLearner::zeros(3), false)}, tape.constant(x), 0.5);
  EXPECT_EQ(out.value(), predict(before, x));
  EXPECT_EQ(l.weights, before.weights);
}

TEST(LayerForwardHat, ConstantRuleHandTrace) {
  // One 1x1 sigmoid layer, W=0, b=0, v=1, M = c: placeholder 0.5, W_new = c*eta.
  const double c = 1.7, eta = 0.3;
  MetaLearner m = MetaLearner::zeros(1);
  m.bias2[0] = c;
  LearnerState l;
  l.layer_sizes = {1, 1};
  l.weights = {Tensor::matrix({{0}})};
  l.biases = {Tensor::matrix({{0}})};
  l.activations = {Activation::kSigmoid};
  Tape tape;
  const LearnerVars lv = bind(tape, l, false);
  const Var out = layer_forward_hat(0, l, lv, SynapseUpdate{bind(tape, m, false)}, tape.constant(Tensor::matrix({{1}})), eta);
  EXPECT_DOUBLE_EQ(l.weights[0].item(), c * eta);
  EXPECT_DOUBLE_EQ(out.value().item(), sigmoid(c * eta));
}

TEST(LayerForwardHat, PlaceholderFeedsMeta) {
  // M = v_j: W_new = eta * mean_b placeholder, so output reveals the placeholder.
  MetaLearner m = MetaLearner::zeros(1);
  m.kernel1.at(0, 2) = 1.0;  // relu(v_j) = v_j for sigmoid outputs
  m.kernel2[0] = 1.0;
  LearnerState l;
  l.layer_sizes = {1, 1};
  l.weights = {Tensor::matrix({{0.4}})};
  l.biases = {Tensor::matrix({{-0.1}})};
  l.activations = {Activation::kSigmoid};
  Tape tape;
  const LearnerVars lv = bind(tape, l, false);
  const double eta = 0.5;
  const Var out = layer_forward_hat(0, l, lv, SynapseUpdate{bind(tape, m, false)}, tape.constant(Tensor::matrix({{2}})), eta);
  const double placeholder = sigmoid(0.4 * 2 - 0.1);
  const double w_new = 0.4 + eta * placeholder;
  EXPECT_DOUBLE_EQ(l.weights[0].item(), w_new);
  EXPECT_DOUBLE_EQ(out.value().item(), sigmoid(w_new * 2 - 0.1));
}

TEST(LayerForwardHat, MetaGradientIsNonzero) {
  const std::vector<std::size_t> sizes{3, 4, 2};
  LearnerState l = build_learner(sizes, 5);
  const MetaLearner m = build_meta(5, 6);
  Tape tape;
  const LearnerVars lv = bind(tape, l, true);
  const MetaVars mv = bind(tape, m, true);
  const std::vector<int> y{0, 1, 1};
  tape.backward(softmax_cross_entropy(forward_hat(l, lv, SynapseUpdate{mv}, tape.constant(random_tensor({3, 3}, 7, 0, 1)), 0.5), y));
  double norm = 0.0;
  for (double g : mv.kernel2.grad().values()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(LayerForwardHat, FullStepGradientCheck) {
  // 2-3-2 learner, H = 5 meta, batch 3: every parameter through the whole step.
  const std::vector<std::size_t> sizes{2, 3, 2};
  for (int s = 0; s < 5; ++s) {
    const LearnerState l = build_learner(sizes, 10 + s);
    const MetaLearner m = build_meta(5, 20 + s);
    const Tensor x = random_tensor({3, 2}, 30 + s, 0, 1);
    const auto y = hat::testing::random_labels(3, 2, 40 + s);
    for (double eta : {0.01, 1.0}) {
      const auto report = hat::testing::hat_step_gradient_error(l, m, x, y, eta);
      EXPECT_EQ(report.checked, 8u);
      EXPECT_LT(report.worst, 1e-6) << "seed " << s << " eta " << eta;
    }
  }
}

TEST(LayerForwardHat, FixedRuleChangesNoShapes) {
  const std::vector<std::size_t> sizes{4, 3, 2};
  LearnerState l = build_learner(sizes, 1);
  const Tensor x = random_tensor({5, 4}, 2, 0, 1);
  for (const auto& id : rule_ids()) {
    LearnerState copy = l;
    Tape tape;
    const LearnerVars lv = bind(tape, copy, false);
    const Var out = forward_hat(copy, lv, SynapseUpdate{*parse_rule(id)}, tape.constant(x), 0.1);
    EXPECT_EQ(out.shape(), (Shape{5, 2}));
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(copy.weights[k].shape(), l.weights[k].shape());
  }
  LearnerState copy = l;
  Tape tape;
  const LearnerVars lv = bind(tape, copy, false);
  EXPECT_EQ(forward_hat(copy, lv, SynapseUpdate{*parse_rule("zero")}, tape.constant(x), 0.1).value(), predict(l, x));
}

// ---- checkpoints --------------------------------------------------------------------

TEST(Checkpoint, RoundTripExact) {
  const MetaLearner m = build_meta(7, 3);
  const fs::path p = temp_file("meta.hatw");
  save_meta(p, m);
  const MetaLearner back = load_meta(p);
  EXPECT_EQ(back.kernel1, m.kernel1);
  EXPECT_EQ(back.bias1, m.bias1);
  EXPECT_EQ(back.kernel2, m.kernel2);
  EXPECT_EQ(back.bias2, m.bias2);

  const std::vector<std::size_t> sizes{4, 3, 2};
  const LearnerState l = build_learner(sizes, 4);
  save_learner(p, l);
  const LearnerState lb = load_learner(p);
  EXPECT_EQ(lb.weights, l.weights);
  EXPECT_EQ(lb.biases, l.biases);
  EXPECT_EQ(lb.layer_sizes, l.layer_sizes);
  fs::remove(p);
}

TEST(Checkpoint, HeaderLayout) {
  const fs::path p = temp_file("layout.hatw");
  const std::vector<Tensor> ts{Tensor({2}, {1.5, -2.0})};
  save_checkpoint(p, ts);
  std::ifstream in(p, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  // magic + version + count + rank + extent + 2 doubles
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 4 + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HATW");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // count
  EXPECT_EQ(bytes[12], 1);  // rank
  EXPECT_EQ(bytes[16], 2);  // extent
  double first;
  std::memcpy(&first, bytes.data() + 20, 8);
  EXPECT_EQ(first, 1.5);
  fs::remove(p);
}

TEST(Checkpoint, CorruptFilesAreNamed) {
  const fs::path p = temp_file("bad.hatw");
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOPE1234";
  }
  try {
    load_meta(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find(p.string()), std::string::npos);
  }
  save_meta(p, build_meta(3, 1));
  fs::resize_file(p, fs::file_size(p) - 5);
  try {
    load_meta(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLength);
  }
  fs::remove(p);
  try {
    load_meta(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}
