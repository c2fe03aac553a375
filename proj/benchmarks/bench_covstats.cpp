// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "bench_util.hpp"
#include "shiftmatch/covstats.hpp"

namespace shiftmatch {
namespace {

// LeNet's second matching site: 6 x 14 x 14.
const Layout kSite{6, 14, 14};

void BM_Accumulate(benchmark::State& state) {
  const auto kind = static_cast<CovKind>(state.range(0));
  const std::size_t p = 1000;
  const FeatureMatrix x(bench::randn<float>({p, kSite.size()}, 1), kSite);
  for (auto _ : state) {
    MomentAccumulator acc(kind, kSite.size(), kSite);
    acc.add(x);
    benchmark::DoNotOptimize(acc.count());
  }
  state.SetLabel(std::string(to_string(kind)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p));
}
BENCHMARK(BM_Accumulate)
    ->Arg(static_cast<int>(CovKind::Full))
    ->Arg(static_cast<int>(CovKind::PerChannelSpatial))
    ->Arg(static_cast<int>(CovKind::KroneckerHW))
    ->Arg(static_cast<int>(CovKind::ChannelJoint))
    ->Arg(static_cast<int>(CovKind::MeanVarOnly))
    ->Unit(benchmark::kMillisecond);

void BM_FinalizeKron(benchmark::State& state) {
  MomentAccumulator acc(CovKind::KroneckerHW, kSite.size(), kSite);
  acc.add(FeatureMatrix(bench::randn<float>({500, kSite.size()}, 2), kSite));
  for (auto _ : state) benchmark::DoNotOptimize(acc.finalize());
}
BENCHMARK(BM_FinalizeKron)->Unit(benchmark::kMicrosecond);

void BM_EncodeDecode(benchmark::State& state) {
  const CovStats s = square_root_form(
      estimate_stats(FeatureMatrix(bench::randn<float>({500, kSite.size()}, 3), kSite), CovKind::KroneckerHW));
  for (auto _ : state) benchmark::DoNotOptimize(decode_stats(encode_stats(s)));
}
BENCHMARK(BM_EncodeDecode)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace shiftmatch
