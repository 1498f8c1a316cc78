// Compares the OpenMP kernels against the serial references they must match
// bit for bit. Build target: bench_kernels.
#include <benchmark/benchmark.h>

#include <vector>

#include "splitnn/kernels.hpp"
#include "splitnn/rng.hpp"

using splitnn::Rng;
namespace kern = splitnn::kern;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void BM_matmul_nt_serial(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  auto a = random_vec(static_cast<size_t>(m * k), 1);
  auto b = random_vec(static_cast<size_t>(n * k), 2);
  std::vector<double> c(static_cast<size_t>(m * n));
  for (auto _ : state) {
    kern::serial::matmul_nt(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * n * k);
}

void BM_matmul_nt_omp(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  auto a = random_vec(static_cast<size_t>(m * k), 1);
  auto b = random_vec(static_cast<size_t>(n * k), 2);
  std::vector<double> c(static_cast<size_t>(m * n));
  for (auto _ : state) {
    kern::matmul_nt(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * n * k);
}

void BM_conv2d_serial(benchmark::State& state) {
  const int64_t m = state.range(0), h = 28, w = 28, cin = 1, f = 32, kh = 5, kw = 5;
  auto x = random_vec(static_cast<size_t>(m * h * w * cin), 3);
  auto wt = random_vec(static_cast<size_t>(f * kh * kw * cin), 4);
  auto bias = random_vec(static_cast<size_t>(f), 5);
  std::vector<double> y(static_cast<size_t>(m * h * w * f));
  for (auto _ : state) {
    kern::serial::conv2d_same(x.data(), wt.data(), bias.data(), y.data(), m, h, w, cin, f, kh, kw);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * m * h * w * f * kh * kw);
}

void BM_conv2d_omp(benchmark::State& state) {
  const int64_t m = state.range(0), h = 28, w = 28, cin = 1, f = 32, kh = 5, kw = 5;
  auto x = random_vec(static_cast<size_t>(m * h * w * cin), 3);
  auto wt = random_vec(static_cast<size_t>(f * kh * kw * cin), 4);
  auto bias = random_vec(static_cast<size_t>(f), 5);
  std::vector<double> y(static_cast<size_t>(m * h * w * f));
  for (auto _ : state) {
    kern::conv2d_same(x.data(), wt.data(), bias.data(), y.data(), m, h, w, cin, f, kh, kw);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * m * h * w * f * kh * kw);
}

void BM_sigmoid_serial(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto x = random_vec(static_cast<size_t>(n), 6);
  std::vector<double> y(static_cast<size_t>(n));
  for (auto _ : state) {
    kern::serial::vsigmoid(x.data(), y.data(), n);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_sigmoid_omp(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto x = random_vec(static_cast<size_t>(n), 6);
  std::vector<double> y(static_cast<size_t>(n));
  for (auto _ : state) {
    kern::vsigmoid(x.data(), y.data(), n);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(BM_matmul_nt_serial)->Args({32, 1568, 16})->Args({32, 6272, 1024});
BENCHMARK(BM_matmul_nt_omp)->Args({32, 1568, 16})->Args({32, 6272, 1024});
BENCHMARK(BM_conv2d_serial)->Arg(8)->Arg(32);
BENCHMARK(BM_conv2d_omp)->Arg(8)->Arg(32);
BENCHMARK(BM_sigmoid_serial)->Arg(1 << 16);
BENCHMARK(BM_sigmoid_omp)->Arg(1 << 16);

BENCHMARK_MAIN();
