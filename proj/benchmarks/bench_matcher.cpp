// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "bench_util.hpp"
#include "shiftmatch/matcher.hpp"

namespace shiftmatch {
namespace {

void BM_ShiftMatchSite(benchmark::State& state) {
  const auto kind = static_cast<CovKind>(state.range(0));
  const Layout site{6, 14, 14};
  const FeatureMatrix train(bench::randn<float>({2000, site.size()}, 1), site);
  const FeatureMatrix test(bench::randn<float>({1000, site.size()}, 2), site);
  const CovStats stats = square_root_form(estimate_stats(train, kind));
  for (auto _ : state) benchmark::DoNotOptimize(shiftmatch(test, stats, kDefaultEps));
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_ShiftMatchSite)
    ->Arg(static_cast<int>(CovKind::PerChannelSpatial))
    ->Arg(static_cast<int>(CovKind::KroneckerHW))
    ->Arg(static_cast<int>(CovKind::ChannelJoint))
    ->Arg(static_cast<int>(CovKind::MeanVarOnly))
    ->Unit(benchmark::kMillisecond);

class Lenet : public benchmark::Fixture {
 public:
  void SetUp(const benchmark::State&) override {
    if (!x.empty()) return;
    x = bench::randn<float>({1000, 1, 28, 28}, 3);
    stats = acquire_train_stats(graph, sample, x, MatchPlacement::parse(graph, "pre"), CovKind::KroneckerHW);
  }
  LayerGraph graph = lenet_s();
  WeightSample sample = init_sample<float>(graph, 4);
  Tensor x;
  TrainStats stats;
};

BENCHMARK_DEFINE_F(Lenet, PlainForward)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(forward(graph, sample, x));
  state.SetItemsProcessed(state.iterations() * 1000);
}

BENCHMARK_DEFINE_F(Lenet, MatchedForwardKron)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(matched_forward(graph, sample, stats, x));
  state.SetItemsProcessed(state.iterations() * 1000);
}

BENCHMARK_DEFINE_F(Lenet, AcquireKron)(benchmark::State& state) {
  const auto p = MatchPlacement::parse(graph, "pre");
  for (auto _ : state) benchmark::DoNotOptimize(acquire_train_stats(graph, sample, x, p, CovKind::KroneckerHW));
}

BENCHMARK_REGISTER_F(Lenet, PlainForward)->Unit(benchmark::kMillisecond);
BENCHMARK_REGISTER_F(Lenet, MatchedForwardKron)->Unit(benchmark::kMillisecond);
BENCHMARK_REGISTER_F(Lenet, AcquireKron)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace shiftmatch
