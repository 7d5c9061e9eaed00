#include "hat/net.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "hat/errors.hpp"
#include "hat/kernels.hpp"

namespace hat {
namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

// ---- construction -----------------------------------------------------------

double MetaLearner::operator()(double v_i, double w, double v_j) const {
  double y = bias2[0];
  for (std::size_t k = 0; k < hidden(); ++k) {
    const double z = kernel1[3 * k] * v_i + kernel1[3 * k + 1] * w + kernel1[3 * k + 2] * v_j + bias1[k];
    if (z > 0.0) y += kernel2[k] * z;
  }
  return y;
}

RuleFn MetaLearner::as_function() const {
  return [m = *this](double v_i, double w, double v_j) { return m(v_i, w, v_j); };
}

MetaLearner MetaLearner::zeros(std::size_t hidden) {
  if (hidden < 1) fail(ErrorKind::kConfig, "meta-learner hidden size must be >= 1");
  return {Tensor({hidden, 3}, 0.0), Tensor({hidden}, 0.0), Tensor({1, hidden}, 0.0),
          Tensor({1}, 0.0)};
}

LearnerState build_learner(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    fail(ErrorKind::kConfig, "learner needs at least 2 layer sizes, got " +
                                 std::to_string(layer_sizes.size()));
  }
  for (auto n : layer_sizes) {
    if (n == 0) fail(ErrorKind::kConfig, "learner layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  LearnerState learner;
  learner.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  const std::size_t layers = layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n_in = layer_sizes[l], n_out = layer_sizes[l + 1];
    learner.weights.push_back(uniform_fan_in({n_out, n_in}, n_in, rng));
    learner.biases.push_back(uniform_fan_in({n_out, 1}, n_in, rng));
    learner.activations.push_back(l + 1 == layers ? Activation::kIdentity : Activation::kSigmoid);
  }
  return learner;
}

MetaLearner build_meta(std::size_t hidden, std::uint64_t seed) {
  if (hidden < 1) fail(ErrorKind::kConfig, "meta-learner hidden size must be >= 1");
  std::mt19937_64 rng(seed);
  MetaLearner meta;
  meta.kernel1 = uniform_fan_in({hidden, 3}, 3, rng);
  meta.bias1 = uniform_fan_in({hidden}, 3, rng);
  meta.kernel2 = uniform_fan_in({1, hidden}, hidden, rng);
  meta.bias2 = uniform_fan_in({1}, hidden, rng);
  return meta;
}

LearnerVars bind(Tape& tape, const LearnerState& learner, bool requires_grad) {
  LearnerVars vars;
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    vars.weights.push_back(tape.leaf(learner.weights[l], requires_grad));
    vars.biases.push_back(tape.leaf(learner.biases[l], requires_grad));
  }
  return vars;
}

MetaVars bind(Tape& tape, const MetaLearner& meta, bool requires_grad) {
  return {tape.leaf(meta.kernel1, requires_grad), tape.leaf(meta.bias1, requires_grad),
          tape.leaf(meta.kernel2, requires_grad), tape.leaf(meta.bias2, requires_grad)};
}

// ---- meta pipeline -----------------------------------------------------------

Var meta_delta(const MetaVars& meta, const Var& v_in, const Var& W, const Var& v_out,
               double eta) {
  if (!std::isfinite(eta)) fail(ErrorKind::kConfig, "eta_m must be finite");
  return synapse_meta_delta(meta, v_in, W, v_out, eta);
}

Var meta_delta_conv(const MetaVars& meta, const Var& v_in, const Var& W, const Var& v_out,
                    double eta) {
  const Var stacked = broadcast_stack(v_in, W, v_out);
  const Var hidden = activation(conv1x1(stacked, meta.kernel1, meta.bias1), Activation::kRelu);
  const Var out = conv1x1(hidden, meta.kernel2, meta.bias2);
  const Shape& s = out.shape();
  const Var per_example = reshape(out, {s[1], s[2], s[3]});
  return scale(mean_axis0(per_example), eta);
}

Var layer_forward_hat(std::size_t layer, LearnerState& learner, const LearnerVars& vars,
                      const SynapseUpdate& update, const Var& v, double eta) {
  if (layer >= learner.num_layers()) {
    fail(ErrorKind::kUsage, "layer index " + std::to_string(layer) + " out of range");
  }
  const Activation act = learner.activations[layer];
  const Var& W = vars.weights[layer];
  const Var& b = vars.biases[layer];
  if (std::holds_alternative<std::monostate>(update)) {
    return affine_activation(W, v, b, act);
  }
  const Var placeholder = affine_activation(W, v, b, act);
  const Var delta = std::holds_alternative<MetaVars>(update)
                        ? meta_delta(std::get<MetaVars>(update), v, W, placeholder, eta)
                        : synapse_rule_delta(std::get<LocalRule>(update), v, W, placeholder, eta);
  const Var updated = add(W, delta);
  learner.weights[layer] = updated.value();
  return affine_activation(updated, v, b, act);
}

Var forward_hat(LearnerState& learner, const LearnerVars& vars, const SynapseUpdate& update,
                const Var& x, double eta) {
  Var v = x;
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    v = layer_forward_hat(l, learner, vars, update, v, eta);
  }
  return v;
}

Tensor predict(const LearnerState& learner, const Tensor& x) {
  Tensor v = x;
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    const Tensor& W = learner.weights[l];
    const std::size_t batch = v.dim(0), n_in = W.dim(1), n_out = W.dim(0);
    if (v.dim(1) != n_in) {
      fail(ErrorKind::kDimension, "predict: input " + to_string(v.shape()) + " vs weight " +
                                      to_string(W.shape()));
    }
    Tensor z({batch, n_out}, 0.0);
    kernels::matmul_nt_acc(v.data(), W.data(), z.data(), batch, n_in, n_out);
    const Tensor& b = learner.biases[l];
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < n_out; ++c)
        z[r * n_out + c] = activate(learner.activations[l], z[r * n_out + c] + b[c]);
    v = std::move(z);
  }
  return v;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic = {'H', 'A', 'T', 'W'};

template <typename T>
void write_le(std::ostream& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in, const std::filesystem::path& path) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) {
    fail(ErrorKind::kLength, "checkpoint " + path.string() + " is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) write_le<double>(out, v);
  }
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has bad magic (expected HATW)");
  }
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has unsupported version " +
                                 std::to_string(version));
  }
  const auto count = read_le<std::uint32_t>(in, path);
  std::vector<Tensor> tensors;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto rank = read_le<std::uint32_t>(in, path);
    if (rank > 8) fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
      e = read_le<std::uint32_t>(in, path);
      if (e == 0) fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has a zero extent");
    }
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = read_le<double>(in, path);
    tensors.emplace_back(std::move(shape), std::move(data));
  }
  return tensors;
}

void save_meta(const std::filesystem::path& path, const MetaLearner& meta) {
  const Tensor tensors[] = {meta.kernel1, meta.bias1, meta.kernel2, meta.bias2};
  save_checkpoint(path, tensors);
}

MetaLearner load_meta(const std::filesystem::path& path) {
  auto t = load_checkpoint(path);
  if (t.size() != 4 || t[0].rank() != 2 || t[0].dim(1) != 3) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + " is not a meta-learner");
  }
  const std::size_t hidden = t[0].dim(0);
  if (t[1].size() != hidden || t[2].size() != hidden || t[3].size() != 1) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has inconsistent meta shapes");
  }
  return {std::move(t[0]), Tensor({hidden}, t[1].values()), Tensor({1, hidden}, t[2].values()),
          Tensor({1}, t[3].values())};
}

void save_learner(const std::filesystem::path& path, const LearnerState& learner) {
  std::vector<Tensor> tensors;
  for (std::size_t l = 0; l < learner.num_layers(); ++l) {
    tensors.push_back(learner.weights[l]);
    tensors.push_back(learner.biases[l]);
  }
  save_checkpoint(path, tensors);
}

LearnerState load_learner(const std::filesystem::path& path) {
  auto t = load_checkpoint(path);
  if (t.empty() || t.size() % 2 != 0) {
    fail(ErrorKind::kFormat, "checkpoint " + path.string() + " is not a learner");
  }
  LearnerState learner;
  const std::size_t layers = t.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor& W = t[2 * l];
    if (W.rank() != 2 || t[2 * l + 1].size() != W.dim(0) ||
        (l > 0 && W.dim(1) != learner.layer_sizes.back())) {
      fail(ErrorKind::kFormat, "checkpoint " + path.string() + " has inconsistent layer shapes");
    }
    if (l == 0) learner.layer_sizes.push_back(W.dim(1));
    learner.layer_sizes.push_back(W.dim(0));
    learner.biases.emplace_back(Shape{W.dim(0), 1}, t[2 * l + 1].values());
    learner.weights.push_back(std::move(W));
    learner.activations.push_back(l + 1 == layers ? Activation::kIdentity : Activation::kSigmoid);
  }
  return learner;
}

}  // namespace hat
