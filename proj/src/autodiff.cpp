#include "hat/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "hat/errors.hpp"

namespace hat {
namespace {

void dimension_error(std::string_view op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kDimension,
       std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

Tape& common_tape(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) fail(ErrorKind::kUsage, "operation on an unrecorded variable");
    if (tape && v->tape() != tape) fail(ErrorKind::kUsage, "operands live on different tapes");
    tape = v->tape();
  }
  return *tape;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorKind::kUsage, "value() of an unrecorded variable");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Var::grad() const {
  if (!tape_) fail(ErrorKind::kUsage, "grad() of an unrecorded variable");
  return tape_->grad(id_);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this || in.id() >= nodes_.size()) {
      fail(ErrorKind::kUsage, "op input is not recorded on this tape");
    }
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs,
                        needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  return const_cast<Tape*>(this)->grad_buffer(id);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.size() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this || loss.id() >= nodes_.size()) {
    fail(ErrorKind::kUsage, "backward: loss is not recorded on this tape");
  }
  if (nodes_[loss.id()].value.size() != 1) {
    fail(ErrorKind::kUsage, "backward: loss must be a scalar, got " +
                                to_string(nodes_[loss.id()].value.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || node.grad.size() == 0) continue;
    node.backward(*this, id);
  }
}

// ---- activations ----------------------------------------------------------

std::optional<Activation> parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  return std::nullopt;
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

double activate(Activation kind, double z) {
  switch (kind) {
    case Activation::kSigmoid: return sigmoid(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kIdentity: return z;
  }
  fail(ErrorKind::kConfig, "unknown activation kind");
}

namespace {

// dL/dz given dL/dy and y = act(z). ReLU uses subgradient 0 at z = 0.
double activation_grad(Activation kind, double y, double gy) {
  switch (kind) {
    case Activation::kSigmoid: return gy * y * (1.0 - y);
    case Activation::kRelu: return y > 0.0 ? gy : 0.0;
    case Activation::kIdentity: return gy;
  }
  return gy;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& tape = common_tape({&a, &b});
  if (a.shape() != b.shape()) dimension_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = common_tape({&a, &b});
  if (a.shape() != b.shape()) dimension_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      const Tensor& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const Tensor& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tape& tape = common_tape({&a});
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return tape.record(std::move(out), inputs, [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var sum(const Var& a) {
  Tape& tape = common_tape({&a});
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return tape.record(Tensor::scalar(s), inputs, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ia).data()) v += g;
  });
}

Var reshape(const Var& a, Shape shape) {
  Tape& tape = common_tape({&a});
  if (shape_size(shape) != a.value().size()) dimension_error("reshape", a.shape(), shape);
  Tensor out(std::move(shape), a.value().values());
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return tape.record(std::move(out), inputs, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var activation(const Var& x, Activation kind) {
  Tape& tape = common_tape({&x});
  Tensor out = x.value();
  for (auto& v : out.data()) v = activate(kind, v);
  const std::size_t ix = x.id();
  const Var inputs[] = {x};
  return tape.record(std::move(out), inputs, [ix, kind](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += activation_grad(kind, y[i], g[i]);
  });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = common_tape({&a, &b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) dimension_error("matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out({m, n}, 0.0);
  kernels::matmul_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {  // g * b^T
      kernels::matmul_nt_acc(g.data(), t.value(ib).data(), t.grad_buffer(ia).data(), m, n, k);
    }
    if (t.requires_grad(ib)) {  // a^T * g
      kernels::matmul_tn_acc(t.value(ia).data(), g.data(), t.grad_buffer(ib).data(), k, m, n);
    }
  });
}

Var affine_activation(const Var& W, const Var& x, const Var& b, Activation kind) {
  Tape& tape = common_tape({&W, &x, &b});
  const Shape& sw = W.shape();
  const Shape& sx = x.shape();
  if (sw.size() != 2 || sx.size() != 2 || sw[1] != sx[1]) {
    dimension_error("affine_activation", sw, sx);
  }
  const std::size_t m = sw[0], k = sw[1], batch = sx[0];
  if (b.value().size() != m) dimension_error("affine_activation bias", sw, b.shape());

  Tensor out({batch, m}, 0.0);
  kernels::matmul_nt_acc(x.value().data(), W.value().data(), out.data(), batch, k, m);
  const Tensor& bias = b.value();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = activate(kind, out[r * m + c] + bias[c]);

  const std::size_t iw = W.id(), ix = x.id(), ib = b.id();
  const Var inputs[] = {W, x, b};
  return tape.record(std::move(out), inputs,
                     [iw, ix, ib, kind, m, k, batch](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor gz(g.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) gz[i] = activation_grad(kind, y[i], g[i]);
    if (t.requires_grad(ix)) {
      kernels::matmul_acc(gz.data(), t.value(iw).data(), t.grad_buffer(ix).data(), batch, m, k);
    }
    if (t.requires_grad(iw)) {
      kernels::matmul_tn_acc(gz.data(), t.value(ix).data(), t.grad_buffer(iw).data(), m, batch, k);
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < m; ++c) gb[c] += gz[r * m + c];
    }
  });
}

// ---- literal meta pipeline -------------------------------------------------

Var broadcast_stack(const Var& v_in, const Var& W, const Var& v_out) {
  Tape& tape = common_tape({&v_in, &W, &v_out});
  const Shape& si = v_in.shape();
  const Shape& sw = W.shape();
  const Shape& so = v_out.shape();
  if (si.size() != 2 || sw.size() != 2 || so.size() != 2 || si[0] != so[0] ||
      sw[1] != si[1] || sw[0] != so[1]) {
    fail(ErrorKind::kDimension, "broadcast_stack: inconsistent shapes v_in " + to_string(si) +
                                    ", W " + to_string(sw) + ", v_out " + to_string(so));
  }
  const std::size_t batch = si[0], n_in = si[1], n_out = so[1];
  const std::size_t plane = batch * n_out * n_in;
  Tensor out({3, batch, n_out, n_in}, 0.0);
  const Tensor& vi = v_in.value();
  const Tensor& w = W.value();
  const Tensor& vo = v_out.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < n_out; ++j) {
      const std::size_t base = (b * n_out + j) * n_in;
      for (std::size_t i = 0; i < n_in; ++i) {
        out[base + i] = vi[b * n_in + i];
        out[plane + base + i] = w[j * n_in + i];
        out[2 * plane + base + i] = vo[b * n_out + j];
      }
    }
  const std::size_t ii = v_in.id(), iw = W.id(), io = v_out.id();
  const Var inputs[] = {v_in, W, v_out};
  return tape.record(std::move(out), inputs,
                     [ii, iw, io, batch, n_in, n_out, plane](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* gi = t.requires_grad(ii) ? &t.grad_buffer(ii) : nullptr;
    Tensor* gw = t.requires_grad(iw) ? &t.grad_buffer(iw) : nullptr;
    Tensor* go = t.requires_grad(io) ? &t.grad_buffer(io) : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < n_out; ++j) {
        const std::size_t base = (b * n_out + j) * n_in;
        double s = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) {
          if (gi) (*gi)[b * n_in + i] += g[base + i];
          if (gw) (*gw)[j * n_in + i] += g[plane + base + i];
          s += g[2 * plane + base + i];
        }
        if (go) (*go)[b * n_out + j] += s;
      }
  });
}

Var conv1x1(const Var& input, const Var& kernel, const Var& bias) {
  Tape& tape = common_tape({&input, &kernel, &bias});
  const Shape& si = input.shape();
  const Shape& sk = kernel.shape();
  if (si.size() < 2 || sk.size() != 2 || sk[1] != si[0]) dimension_error("conv1x1", si, sk);
  const std::size_t c_in = si[0], c_out = sk[0];
  const std::size_t sites = input.value().size() / c_in;
  if (bias.value().size() != c_out) dimension_error("conv1x1 bias", sk, bias.shape());

  Shape out_shape = si;
  out_shape[0] = c_out;
  Tensor out(out_shape, 0.0);
  kernels::matmul_acc(kernel.value().data(), input.value().data(), out.data(), c_out, c_in, sites);
  const Tensor& bv = bias.value();
  for (std::size_t c = 0; c < c_out; ++c)
    for (std::size_t s = 0; s < sites; ++s) out[c * sites + s] += bv[c];

  const std::size_t ii = input.id(), ik = kernel.id(), ib = bias.id();
  const Var inputs[] = {input, kernel, bias};
  return tape.record(std::move(out), inputs,
                     [ii, ik, ib, c_in, c_out, sites](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ii)) {
      kernels::matmul_tn_acc(t.value(ik).data(), g.data(), t.grad_buffer(ii).data(), c_in, c_out, sites);
    }
    if (t.requires_grad(ik)) {
      kernels::matmul_nt_acc(g.data(), t.value(ii).data(), t.grad_buffer(ik).data(), c_out, sites, c_in);
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t c = 0; c < c_out; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < sites; ++p) s += g[c * sites + p];
        gb[c] += s;
      }
    }
  });
}

Var mean_axis0(const Var& input) {
  Tape& tape = common_tape({&input});
  const Shape& si = input.shape();
  if (si.empty() || si[0] == 0) {
    fail(ErrorKind::kDimension, "mean_axis0: no leading axis in " + to_string(si));
  }
  const std::size_t batch = si[0];
  const std::size_t slice = input.value().size() / batch;
  Tensor out(Shape(si.begin() + 1, si.end()), 0.0);
  const Tensor& in = input.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t e = 0; e < slice; ++e) out[e] += in[b * slice + e];
  const double inv = 1.0 / static_cast<double>(batch);
  for (auto& v : out.data()) v *= inv;

  const std::size_t ii = input.id();
  const Var inputs[] = {input};
  return tape.record(std::move(out), inputs, [ii, batch, slice, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gi = t.grad_buffer(ii);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t e = 0; e < slice; ++e) gi[b * slice + e] += g[e] * inv;
  });
}

// ---- loss -----------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  Tape& tape = common_tape({&logits});
  const Shape& sl = logits.shape();
  if (sl.size() != 2 || sl[0] != labels.size()) {
    fail(ErrorKind::kDimension, "softmax_cross_entropy: logits " + to_string(sl) + " vs " +
                                    std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = sl[0], classes = sl[1];
  std::size_t labeled = 0;
  for (int y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      fail(ErrorKind::kData, "label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(classes) + ")");
    }
    ++labeled;
  }
  if (labeled == 0) fail(ErrorKind::kUsage, "softmax_cross_entropy: no labeled rows");

  const Tensor& z = logits.value();
  Tensor probs({batch, classes}, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = z.data().data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - peak);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - peak) / denom;
    if (labels[r] != kIgnoreLabel) {
      loss += std::log(denom) - (row[labels[r]] - peak);
    }
  }
  loss /= static_cast<double>(labeled);

  std::vector<int> kept(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  const Var inputs[] = {logits};
  return tape.record(Tensor::scalar(loss), inputs,
                     [il, kept = std::move(kept), probs = std::move(probs), labeled, classes](
                         Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(labeled);
    Tensor& gl = t.grad_buffer(il);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (kept[r] == kIgnoreLabel) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const double target = static_cast<int>(c) == kept[r] ? 1.0 : 0.0;
        gl[r * classes + c] += g * (probs[r * classes + c] - target);
      }
    }
  });
}

// ---- fused synapse updates ------------------------------------------------

namespace {

kernels::SynapseDims synapse_dims(std::string_view op, const Var& v_in, const Var& W,
                                  const Var& v_out) {
  const Shape& si = v_in.shape();
  const Shape& sw = W.shape();
  const Shape& so = v_out.shape();
  if (si.size() != 2 || sw.size() != 2 || so.size() != 2 || si[0] != so[0] ||
      sw[1] != si[1] || sw[0] != so[1]) {
    fail(ErrorKind::kDimension, std::string(op) + ": inconsistent shapes v_in " + to_string(si) +
                                    ", W " + to_string(sw) + ", v_out " + to_string(so));
  }
  return {si[0], si[1], so[1]};
}

std::span<double> grad_or_empty(Tape& t, std::size_t id) {
  return t.requires_grad(id) ? t.grad_buffer(id).data() : std::span<double>{};
}

}  // namespace

Var synapse_meta_delta(const MetaVars& meta, const Var& v_in, const Var& W,
                       const Var& v_out, double eta) {
  Tape& tape = common_tape({&meta.kernel1, &meta.bias1, &meta.kernel2, &meta.bias2, &v_in, &W,
                            &v_out});
  const auto dims = synapse_dims("meta_delta", v_in, W, v_out);
  const std::size_t hidden = meta.kernel1.value().size() / 3;
  if (meta.kernel1.shape() != Shape{hidden, 3} || meta.bias1.value().size() != hidden ||
      meta.kernel2.value().size() != hidden || meta.bias2.value().size() != 1) {
    fail(ErrorKind::kDimension, "meta_delta: malformed meta-learner parameters");
  }
  auto view = [hidden](Tape& t, std::size_t k1, std::size_t b1, std::size_t k2, std::size_t b2) {
    return kernels::MetaView{t.value(k1).data(), t.value(b1).data(), t.value(k2).data(),
                             t.value(b2).data(), hidden};
  };
  const std::size_t k1 = meta.kernel1.id(), b1 = meta.bias1.id(), k2 = meta.kernel2.id(),
                    b2 = meta.bias2.id(), ii = v_in.id(), iw = W.id(), io = v_out.id();

  Tensor out({dims.n_out, dims.n_in}, 0.0);
  kernels::meta_delta_forward(view(tape, k1, b1, k2, b2), v_in.value().data(), W.value().data(),
                              v_out.value().data(), dims, eta, out.data());

  const Var inputs[] = {meta.kernel1, meta.bias1, meta.kernel2, meta.bias2, v_in, W, v_out};
  return tape.record(std::move(out), inputs,
                     [=](Tape& t, std::size_t self) {
    kernels::MetaGradView gm;
    const bool meta_trainable = t.requires_grad(k1) && t.requires_grad(b1) &&
                                t.requires_grad(k2) && t.requires_grad(b2);
    if (meta_trainable) {
      gm = {t.grad_buffer(k1).data(), t.grad_buffer(b1).data(), t.grad_buffer(k2).data(),
            t.grad_buffer(b2).data()};
    } else if (t.requires_grad(k1) || t.requires_grad(b1) || t.requires_grad(k2) ||
               t.requires_grad(b2)) {
      fail(ErrorKind::kUsage, "meta_delta: meta parameters must be all trainable or all frozen");
    }
    kernels::meta_delta_backward(view(t, k1, b1, k2, b2), t.value(ii).data(), t.value(iw).data(),
                                 t.value(io).data(), dims, eta, t.grad(self).data(),
                                 grad_or_empty(t, ii), grad_or_empty(t, iw),
                                 grad_or_empty(t, io), gm);
  });
}

Var synapse_rule_delta(const LocalRule& rule, const Var& v_in, const Var& W, const Var& v_out,
                       double eta) {
  Tape& tape = common_tape({&v_in, &W, &v_out});
  const auto dims = synapse_dims("rule_delta", v_in, W, v_out);
  Tensor out({dims.n_out, dims.n_in}, 0.0);
  kernels::rule_delta_forward(rule, v_in.value().data(), W.value().data(), v_out.value().data(),
                              dims, eta, out.data());
  const std::size_t ii = v_in.id(), iw = W.id(), io = v_out.id();
  const Var inputs[] = {v_in, W, v_out};
  return tape.record(std::move(out), inputs, [=](Tape& t, std::size_t self) {
    kernels::rule_delta_backward(rule, t.value(ii).data(), t.value(iw).data(), t.value(io).data(),
                                 dims, eta, t.grad(self).data(), grad_or_empty(t, ii),
                                 grad_or_empty(t, iw), grad_or_empty(t, io));
  });
}

}  // namespace hat
