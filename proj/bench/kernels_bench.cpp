// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>

#include "eve/kernels.hpp"

namespace {

using namespace eve;

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& x : m.data) x = d(rng);
  return m;
}

Tensor3 random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor3 t(c, h, w);
  for (double& x : t.data) x = d(rng);
  return t;
}

ConvWeights random_conv(int out, int in, int kernel, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.1);
  ConvWeights w{out, in, kernel, std::vector<double>(static_cast<std::size_t>(out) * in * kernel * kernel), {}};
  for (double& x : w.weights) x = d(rng);
  w.bias.assign(out, 0.01);
  return w;
}

// Token counts match a latent side of 8, 16 and 32 (64, 256, 1024 tokens).
template <Matrix (*Fn)(const Matrix&, const Matrix&, const Matrix&)>
void BM_attention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix q = random_matrix(n, 32, 1), k = random_matrix(n, 32, 2), v = random_matrix(n, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(q, k, v));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(n) * n);
}

template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_project(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix x = random_matrix(n, 64, 4), w = random_matrix(64, 64, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, w));
}

template <Tensor3 (*Fn)(const Tensor3&, const ConvWeights&, int)>
void BM_conv2d(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Tensor3 in = random_tensor(16, side, side, 6);
  const ConvWeights w = random_conv(16, 16, 3, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(in, w, 1));
}

}  // namespace

BENCHMARK(BM_attention<eve::kernels::serial::attention>)->Name("attention/serial")->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_attention<eve::kernels::omp::attention>)->Name("attention/omp")->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_project<eve::kernels::serial::project>)->Name("project/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_project<eve::kernels::omp::project>)->Name("project/omp")->Arg(256)->Arg(4096);
BENCHMARK(BM_conv2d<eve::kernels::serial::conv2d>)->Name("conv2d/serial")->Arg(16)->Arg(64);
BENCHMARK(BM_conv2d<eve::kernels::omp::conv2d>)->Name("conv2d/omp")->Arg(16)->Arg(64);

BENCHMARK_MAIN();
