#include "hat/kernels.hpp"

#include <algorithm>
#include <vector>

namespace hat::kernels {
namespace {

// Output rows of a synapse layer are processed in fixed-size chunks. Each
// chunk owns private accumulators for the quantities shared across rows,
// and the chunks are reduced in index order afterwards.
constexpr std::size_t kRowChunk = 8;
constexpr std::size_t kParallelWork = 1 << 15;

std::size_t chunk_count(std::size_t rows) { return (rows + kRowChunk - 1) / kRowChunk; }

// Sums `parts` consecutive blocks of `out.size()` values into `out`.
void reduce_chunks(const std::vector<double>& partial, std::size_t parts,
                   std::span<double> out) {
  const std::size_t n = out.size();
#pragma omp parallel for schedule(static) if (n * parts > kParallelWork)
  for (std::size_t e = 0; e < n; ++e) {
    double s = 0.0;
    for (std::size_t p = 0; p < parts; ++p) s += partial[p * n + e];
    out[e] += s;
  }
}

template <bool kNeedVin, bool kNeedMeta>
void meta_backward_rows(const MetaView& meta, const double* v_in, const double* w,
                        const double* v_out, SynapseDims dims, double eta,
                        const double* grad_out, double* vin_part, double* meta_part,
                        double* grad_w, double* grad_v_out, std::size_t row_begin,
                        std::size_t row_end) {
  const std::size_t hidden = meta.hidden;
  const std::size_t n_in = dims.n_in;
  const double* k1 = meta.kernel1.data();
  const double* b1 = meta.bias1.data();
  const double* k2 = meta.kernel2.data();
  std::vector<double> g(n_in);
  std::vector<double> gq(n_in);
  std::vector<double> gw_row(n_in);
  std::vector<double> t_vout(dims.batch);
  const double scale = eta / static_cast<double>(dims.batch);

  for (std::size_t j = row_begin; j < row_end; ++j) {
    const double* wj = w + j * n_in;
    for (std::size_t i = 0; i < n_in; ++i) g[i] = grad_out[j * n_in + i] * scale;
    std::fill(gw_row.begin(), gw_row.end(), 0.0);
    std::fill(t_vout.begin(), t_vout.end(), 0.0);
    double* gwr = gw_row.data();
    const double* gp = g.data();
    double* gqp = gq.data();
    if (meta_part) {
      double s = 0.0;
      for (std::size_t i = 0; i < n_in; ++i) s += grad_out[j * n_in + i];
      meta_part[5 * hidden] += eta * s;
    }
    for (std::size_t k = 0; k < hidden; ++k) {
      const double a = k1[3 * k];
      const double c = k1[3 * k + 1];
      const double d = k1[3 * k + 2];
      const double q = k2[k];
      // a conditional load of g[i] * q would keep this loop scalar
      for (std::size_t i = 0; i < n_in; ++i) gqp[i] = gp[i] * q;
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double vj = v_out[b * dims.n_out + j];
        const double* vi = v_in + b * n_in;
        double* gvi = kNeedVin ? vin_part + b * n_in : nullptr;
        const double shift = d * vj + b1[k];
        double sg = 0.0, sgv = 0.0, sgw = 0.0, sgr = 0.0;
#pragma omp simd reduction(+ : sg, sgv, sgw, sgr)
        for (std::size_t i = 0; i < n_in; ++i) {
          const double pre = a * vi[i] + c * wj[i] + shift;
          const double r = pre > 0.0 ? pre : 0.0;
          const double gs = pre > 0.0 ? gqp[i] : 0.0;
          sgr += gp[i] * r;
          if constexpr (kNeedVin) gvi[i] += gs * a;
          gwr[i] += gs * c;
          sg += gs;
          if constexpr (kNeedMeta) {
            sgv += gs * vi[i];
            sgw += gs * wj[i];
          }
        }
        t_vout[b] += sg * d;
        if constexpr (kNeedMeta) {
          meta_part[3 * k] += sgv;
          meta_part[3 * k + 1] += sgw;
          meta_part[3 * k + 2] += sg * vj;
          meta_part[3 * hidden + k] += sg;
          meta_part[4 * hidden + k] += sgr;
        }
      }
    }
    if (grad_v_out) {
      for (std::size_t b = 0; b < dims.batch; ++b) grad_v_out[b * dims.n_out + j] += t_vout[b];
    }
    if (grad_w) {
      for (std::size_t i = 0; i < n_in; ++i) grad_w[j * n_in + i] += gwr[i];
    }
  }
}

}  // namespace

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::size_t r = 0; r < m; ++r) {
    double* cr = c.data() + r * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[r * k + kk];
      const double* br = b.data() + kk * n;
#pragma omp simd
      for (std::size_t col = 0; col < n; ++col) cr[col] += av * br[col];
    }
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::size_t r = 0; r < m; ++r) {
    const double* ar = a.data() + r * k;
    for (std::size_t col = 0; col < n; ++col) {
      const double* bc = b.data() + col * k;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t kk = 0; kk < k; ++kk) s += ar[kk] * bc[kk];
      c[r * n + col] += s;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::size_t r = 0; r < m; ++r) {
    double* cr = c.data() + r * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[kk * m + r];
      const double* br = b.data() + kk * n;
#pragma omp simd
      for (std::size_t col = 0; col < n; ++col) cr[col] += av * br[col];
    }
  }
}

void meta_delta_forward(const MetaView& meta, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out) {
  const std::size_t n_in = dims.n_in;
  const std::size_t hidden = meta.hidden;
  const double* k1 = meta.kernel1.data();
  const double* b1 = meta.bias1.data();
  const double* k2 = meta.kernel2.data();
  const double b2 = meta.bias2[0];
  const double inv_batch = 1.0 / static_cast<double>(dims.batch);
  const std::size_t work = dims.batch * dims.n_out * n_in * hidden;

#pragma omp parallel if (work > kParallelWork)
  {
    std::vector<double> acc(n_in);
#pragma omp for schedule(static)
    for (std::size_t j = 0; j < dims.n_out; ++j) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double* ap = acc.data();
      const double* wj = w.data() + j * n_in;
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double vj = v_out[b * dims.n_out + j];
        const double* vi = v_in.data() + b * n_in;
        for (std::size_t k = 0; k < hidden; ++k) {
          const double a = k1[3 * k];
          const double c = k1[3 * k + 1];
          const double shift = k1[3 * k + 2] * vj + b1[k];
          const double q = k2[k];
#pragma omp simd
          for (std::size_t i = 0; i < n_in; ++i) {
            const double pre = a * vi[i] + c * wj[i] + shift;
            ap[i] += q * (pre > 0.0 ? pre : 0.0);
          }
        }
      }
      for (std::size_t i = 0; i < n_in; ++i) {
        out[j * n_in + i] = eta * (ap[i] * inv_batch + b2);
      }
    }
  }
}

void meta_delta_backward(const MetaView& meta, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out, const MetaGradView& grad_meta) {
  const std::size_t hidden = meta.hidden;
  const std::size_t chunks = chunk_count(dims.n_out);
  const bool need_vin = !grad_v_in.empty();
  const bool need_meta = !grad_meta.empty();
  const std::size_t vin_block = dims.batch * dims.n_in;
  const std::size_t meta_block = 5 * hidden + 1;
  std::vector<double> vin_part(need_vin ? chunks * vin_block : 0, 0.0);
  std::vector<double> meta_part(need_meta ? chunks * meta_block : 0, 0.0);
  const std::size_t work = dims.batch * dims.n_out * dims.n_in * hidden;

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    const std::size_t begin = ch * kRowChunk;
    const std::size_t end = std::min(begin + kRowChunk, dims.n_out);
    double* vp = need_vin ? vin_part.data() + ch * vin_block : nullptr;
    double* mp = need_meta ? meta_part.data() + ch * meta_block : nullptr;
    double* gw = grad_w.empty() ? nullptr : grad_w.data();
    double* gvo = grad_v_out.empty() ? nullptr : grad_v_out.data();
    if (need_vin && need_meta) {
      meta_backward_rows<true, true>(meta, v_in.data(), w.data(), v_out.data(), dims, eta,
                                     grad_out.data(), vp, mp, gw, gvo, begin, end);
    } else if (need_vin) {
      meta_backward_rows<true, false>(meta, v_in.data(), w.data(), v_out.data(), dims, eta,
                                      grad_out.data(), vp, mp, gw, gvo, begin, end);
    } else if (need_meta) {
      meta_backward_rows<false, true>(meta, v_in.data(), w.data(), v_out.data(), dims, eta,
                                      grad_out.data(), vp, mp, gw, gvo, begin, end);
    } else {
      meta_backward_rows<false, false>(meta, v_in.data(), w.data(), v_out.data(), dims,
                                       eta, grad_out.data(), vp, mp, gw, gvo, begin, end);
    }
  }

  if (need_vin) reduce_chunks(vin_part, chunks, grad_v_in);
  if (need_meta) {
    std::vector<double> total(meta_block, 0.0);
    reduce_chunks(meta_part, chunks, total);
    for (std::size_t e = 0; e < 3 * hidden; ++e) grad_meta.kernel1[e] += total[e];
    for (std::size_t k = 0; k < hidden; ++k) {
      grad_meta.bias1[k] += total[3 * hidden + k];
      grad_meta.kernel2[k] += total[4 * hidden + k];
    }
    grad_meta.bias2[0] += total[5 * hidden];
  }
}

void rule_delta_forward(const LocalRule& rule, std::span<const double> v_in,
                        std::span<const double> w, std::span<const double> v_out,
                        SynapseDims dims, double eta, std::span<double> out) {
  const std::size_t n_in = dims.n_in;
  const double scale = eta / static_cast<double>(dims.batch);
#pragma omp parallel for schedule(static) if (dims.batch * dims.n_out * n_in > kParallelWork)
  for (std::size_t j = 0; j < dims.n_out; ++j) {
    for (std::size_t i = 0; i < n_in; ++i) {
      const double wji = w[j * n_in + i];
      double s = 0.0;
      for (std::size_t b = 0; b < dims.batch; ++b) {
        s += rule(v_in[b * n_in + i], wji, v_out[b * dims.n_out + j]);
      }
      out[j * n_in + i] = scale * s;
    }
  }
}

void rule_delta_backward(const LocalRule& rule, std::span<const double> v_in,
                         std::span<const double> w, std::span<const double> v_out,
                         SynapseDims dims, double eta,
                         std::span<const double> grad_out,
                         std::span<double> grad_v_in, std::span<double> grad_w,
                         std::span<double> grad_v_out) {
  const std::size_t n_in = dims.n_in;
  const double scale = eta / static_cast<double>(dims.batch);
  const std::size_t chunks = chunk_count(dims.n_out);
  const bool need_vin = !grad_v_in.empty();
  const std::size_t vin_block = dims.batch * n_in;
  std::vector<double> vin_part(need_vin ? chunks * vin_block : 0, 0.0);

#pragma omp parallel for schedule(static) if (dims.batch * dims.n_out * n_in > kParallelWork)
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    const std::size_t end = std::min((ch + 1) * kRowChunk, dims.n_out);
    double* vp = need_vin ? vin_part.data() + ch * vin_block : nullptr;
    for (std::size_t j = ch * kRowChunk; j < end; ++j) {
      for (std::size_t b = 0; b < dims.batch; ++b) {
        const double vj = v_out[b * dims.n_out + j];
        double s_vj = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) {
          const double g = grad_out[j * n_in + i] * scale;
          const auto p = rule.partials(v_in[b * n_in + i], w[j * n_in + i], vj);
          if (vp) vp[b * n_in + i] += g * p.d_vi;
          if (!grad_w.empty()) grad_w[j * n_in + i] += g * p.d_w;
          s_vj += g * p.d_vj;
        }
        if (!grad_v_out.empty()) grad_v_out[b * dims.n_out + j] += s_vj;
      }
    }
  }
  if (need_vin) reduce_chunks(vin_part, chunks, grad_v_in);
}

}  // namespace hat::kernels
