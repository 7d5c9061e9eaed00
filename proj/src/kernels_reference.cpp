// Serial reference kernels. These follow the defining formulas literally,
// one synapse and one hidden unit at a time, and are used to check the
// parallel kernels.

#include <algorithm>
#include <vector>

#include "hat/kernels.hpp"

namespace hat::kernels::reference {
namespace {

double relu(double z) { return z > 0.0 ? z : 0.0; }

}  // namespace

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t col = 0; col < n; ++col) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[r * k + kk] * b[kk * n + col];
      c[r * n + col] += s;
    }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t col = 0; col < n; ++col) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[r * k + kk] * b[col * k + kk];
      c[r * n + col] += s;
    }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t col = 0; col < n; ++col) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[kk * m + r] * b[kk * n + col];
      c[r * n + col] += s;
    }
}

void meta_delta_forward(const MetaView& meta, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out) {
  const std::size_t H = meta.hidden;
  for (std::size_t j = 0; j < dims.n_out; ++j)
    for (std::size_t i = 0; i < dims.n_in; ++i) {
      double sum = 0.0;
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double x[3] = {v_in[b * dims.n_in + i], w[j * dims.n_in + i],
                             v_out[b * dims.n_out + j]};
        double y = meta.bias2[0];
        for (std::size_t k = 0; k < H; ++k) {
          double z = meta.bias1[k];
          for (std::size_t c = 0; c < 3; ++c) z += meta.kernel1[3 * k + c] * x[c];
          y += meta.kernel2[k] * relu(z);
        }
        sum += y;
      }
      out[j * dims.n_in + i] = eta * sum / static_cast<double>(dims.batch);
    }
}

void meta_delta_backward(const MetaView& meta, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out, const MetaGradView& grad_meta) {
  const std::size_t H = meta.hidden;
  std::vector<double> z(H);
  for (std::size_t j = 0; j < dims.n_out; ++j)
    for (std::size_t i = 0; i < dims.n_in; ++i)
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double g = grad_out[j * dims.n_in + i] * eta / static_cast<double>(dims.batch);
        const double x[3] = {v_in[b * dims.n_in + i], w[j * dims.n_in + i],
                             v_out[b * dims.n_out + j]};
        double dx[3] = {0.0, 0.0, 0.0};
        if (!grad_meta.empty()) grad_meta.bias2[0] += g;
        for (std::size_t k = 0; k < H; ++k) {
          z[k] = meta.bias1[k];
          for (std::size_t c = 0; c < 3; ++c) z[k] += meta.kernel1[3 * k + c] * x[c];
          const double dz = z[k] > 0.0 ? g * meta.kernel2[k] : 0.0;
          for (std::size_t c = 0; c < 3; ++c) dx[c] += dz * meta.kernel1[3 * k + c];
          if (!grad_meta.empty()) {
            grad_meta.kernel2[k] += g * relu(z[k]);
            grad_meta.bias1[k] += dz;
            for (std::size_t c = 0; c < 3; ++c) grad_meta.kernel1[3 * k + c] += dz * x[c];
          }
        }
        if (!grad_v_in.empty()) grad_v_in[b * dims.n_in + i] += dx[0];
        if (!grad_w.empty()) grad_w[j * dims.n_in + i] += dx[1];
        if (!grad_v_out.empty()) grad_v_out[b * dims.n_out + j] += dx[2];
      }
}

void rule_delta_forward(const LocalRule& rule, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out) {
  for (std::size_t j = 0; j < dims.n_out; ++j)
    for (std::size_t i = 0; i < dims.n_in; ++i) {
      double s = 0.0;
      for (std::size_t b = 0; b < dims.batch; ++b)
        s += rule(v_in[b * dims.n_in + i], w[j * dims.n_in + i], v_out[b * dims.n_out + j]);
      out[j * dims.n_in + i] = eta * s / static_cast<double>(dims.batch);
    }
}

void rule_delta_backward(const LocalRule& rule, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out) {
  for (std::size_t j = 0; j < dims.n_out; ++j)
    for (std::size_t i = 0; i < dims.n_in; ++i)
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double g = grad_out[j * dims.n_in + i] * eta / static_cast<double>(dims.batch);
        const auto p = rule.partials(v_in[b * dims.n_in + i], w[j * dims.n_in + i],
                                     v_out[b * dims.n_out + j]);
        if (!grad_v_in.empty()) grad_v_in[b * dims.n_in + i] += g * p.d_vi;
        if (!grad_w.empty()) grad_w[j * dims.n_in + i] += g * p.d_w;
        if (!grad_v_out.empty()) grad_v_out[b * dims.n_out + j] += g * p.d_vj;
      }
}

}  // namespace hat::kernels::reference
