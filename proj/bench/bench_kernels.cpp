// Parallel kernels vs the serial reference at the full layer size
// (B = 50, 784 -> 183, meta hidden 100 unless noted).

#include <benchmark/benchmark.h>

#include <omp.h>

#include <random>
#include <vector>

#include "hat/kernels.hpp"

namespace k = hat::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct Layer {
  k::SynapseDims dims;
  std::size_t hidden;
  std::vector<double> v_in, w, v_out, k1, b1, k2, b2, grad_out;

  Layer(std::size_t batch, std::size_t n_in, std::size_t n_out, std::size_t h)
      : dims{batch, n_in, n_out},
        hidden(h),
        v_in(random_vec(batch * n_in, 1, 0, 1)),
        w(random_vec(n_out * n_in, 2)),
        v_out(random_vec(batch * n_out, 3, 0, 1)),
        k1(random_vec(h * 3, 4)),
        b1(random_vec(h, 5)),
        k2(random_vec(h, 6)),
        b2(random_vec(1, 7)),
        grad_out(random_vec(n_out * n_in, 8)) {}

  k::MetaView view() const { return {k1, b1, k2, b2, hidden}; }
};

Layer& full_layer(std::size_t hidden) {
  static Layer h100(50, 784, 183, 100), h20(50, 784, 183, 20);
  return hidden == 100 ? h100 : h20;
}

template <bool Parallel>
void BM_MetaForward(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const Layer& l = full_layer(static_cast<std::size_t>(state.range(0)));
  std::vector<double> out(l.w.size());
  for (auto _ : state) {
    if constexpr (Parallel) k::meta_delta_forward(l.view(), l.v_in, l.w, l.v_out, l.dims, 0.01, out);
    else k::reference::meta_delta_forward(l.view(), l.v_in, l.w, l.v_out, l.dims, 0.01, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["synapse_evals/s"] = benchmark::Counter(
      static_cast<double>(l.dims.batch * l.w.size()) * static_cast<double>(state.iterations()),
      benchmark::Counter::kIsRate);
}

template <bool Parallel>
void BM_MetaBackward(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const Layer& l = full_layer(static_cast<std::size_t>(state.range(0)));
  std::vector<double> gv_in(l.v_in.size()), gw(l.w.size()), gv_out(l.v_out.size());
  std::vector<double> gk1(l.k1.size()), gb1(l.b1.size()), gk2(l.k2.size()), gb2(1);
  const k::MetaGradView gm{gk1, gb1, gk2, gb2};
  for (auto _ : state) {
    if constexpr (Parallel)
      k::meta_delta_backward(l.view(), l.v_in, l.w, l.v_out, l.dims, 0.01, l.grad_out, gv_in, gw, gv_out, gm);
    else
      k::reference::meta_delta_backward(l.view(), l.v_in, l.w, l.v_out, l.dims, 0.01, l.grad_out, gv_in, gw,
                                        gv_out, gm);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  // B x 784 times (183 x 784)^T, the learner's first layer
  const auto a = random_vec(50 * 784, 1), b = random_vec(183 * 784, 2);
  std::vector<double> c(50 * 183);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    if constexpr (Parallel) k::matmul_nt_acc(a, b, c, 50, 784, 183);
    else k::reference::matmul_nt_acc(a, b, c, 50, 784, 183);
    benchmark::DoNotOptimize(c.data());
  }
}

void thread_args(benchmark::internal::Benchmark* b, bool with_hidden) {
  const int max = omp_get_num_procs();
  for (int h : {20, 100}) {
    if (!with_hidden && h == 100) break;
    for (int t = 1; t <= max; t *= 2) with_hidden ? b->Args({h, t}) : b->Args({t});
    if ((max & (max - 1)) != 0) with_hidden ? b->Args({h, max}) : b->Args({max});
  }
}

}  // namespace

BENCHMARK(BM_MetaForward<false>)->Name("meta_forward/reference")->Args({20, 1})->Args({100, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetaForward<true>)->Name("meta_forward/parallel")->Apply([](auto* b) { thread_args(b, true); })->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MetaBackward<false>)->Name("meta_backward/reference")->Args({20, 1})->Args({100, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetaBackward<true>)->Name("meta_backward/parallel")->Apply([](auto* b) { thread_args(b, true); })->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Matmul<false>)->Name("matmul_nt/reference")->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Matmul<true>)->Name("matmul_nt/parallel")->Apply([](auto* b) { thread_args(b, false); })->Unit(benchmark::kMicrosecond)->UseRealTime();

BENCHMARK_MAIN();
