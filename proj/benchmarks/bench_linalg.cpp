// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "bench_util.hpp"

namespace shiftmatch {
namespace {

void BM_EigJacobi(benchmark::State& state) {
  const SymMatrix a = bench::gram(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig(a, EigMethod::Jacobi));
}
BENCHMARK(BM_EigJacobi)->RangeMultiplier(2)->Range(8, 128)->Unit(benchmark::kMicrosecond);

void BM_EigTridiagonal(benchmark::State& state) {
  const SymMatrix a = bench::gram(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig(a, EigMethod::Tridiagonal));
}
BENCHMARK(BM_EigTridiagonal)->RangeMultiplier(2)->Range(8, 1024)->Unit(benchmark::kMicrosecond);

void BM_SqrtPair(benchmark::State& state) {
  const SymMatrix a = bench::gram(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(sym_sqrt_pair(a, 1e-5));
}
BENCHMARK(BM_SqrtPair)->Arg(14)->Arg(28)->Arg(196)->Arg(784)->Unit(benchmark::kMicrosecond);

void BM_Svd(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const TensorD a = bench::randn({n, n / 2}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(svd(a));
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor a = bench::randn<float>({n, n}, 4), b = bench::randn<float>({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(784)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace shiftmatch
