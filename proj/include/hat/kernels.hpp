#pragma once

// Raw numeric kernels behind the autodiff ops.
//
// Two implementations share each signature:
//   hat::kernels            OpenMP-parallel, vectorized; used in training
//   hat::kernels::reference plain serial loops; kept for tests and benchmarks
//
// All matrices are row-major. "acc" kernels add into their output. Work is
// split so that every output element is summed in a fixed order regardless
// of the number of threads, so results are bitwise reproducible.

#include <cstddef>
#include <span>

#include "hat/rules.hpp"

namespace hat::kernels {

/// Parameter views of the pointwise 3 -> H -> 1 meta network.
/// kernel1 is H x 3 with columns ordered (v_i, w, v_j).
struct MetaView {
  std::span<const double> kernel1;
  std::span<const double> bias1;
  std::span<const double> kernel2;
  std::span<const double> bias2;
  std::size_t hidden = 0;
};

/// Gradient sinks for the meta network; empty spans are skipped.
struct MetaGradView {
  std::span<double> kernel1;
  std::span<double> bias1;
  std::span<double> kernel2;
  std::span<double> bias2;
  bool empty() const { return kernel1.empty(); }
};

/// Shapes of one synapse layer: v_in is batch x n_in, W is n_out x n_in,
/// v_out is batch x n_out.
struct SynapseDims {
  std::size_t batch = 0;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
};

// c[m x n] += a[m x k] * b[k x n]
void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] += a[m x k] * b[n x k]^T
void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] += a[k x m]^T * b[k x n]
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

/// out[j, i] = eta * mean_b M(v_in[b, i], w[j, i], v_out[b, j]).
void meta_delta_forward(const MetaView& meta, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out);

/// Accumulates gradients of meta_delta_forward given dL/d(out).
/// Any empty gradient span is not computed.
void meta_delta_backward(const MetaView& meta, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out, const MetaGradView& grad_meta);

/// out[j, i] = eta * mean_b rule(v_in[b, i], w[j, i], v_out[b, j]).
void rule_delta_forward(const LocalRule& rule, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out);

void rule_delta_backward(const LocalRule& rule, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out);

namespace reference {

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

void meta_delta_forward(const MetaView& meta, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out);
void meta_delta_backward(const MetaView& meta, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out, const MetaGradView& grad_meta);

void rule_delta_forward(const LocalRule& rule, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out);
void rule_delta_backward(const LocalRule& rule, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out);

}  // namespace reference
}  // namespace hat::kernels
