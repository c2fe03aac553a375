// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// The distribution's libbenchmark_main.a ships LTO bytecode tied to another
// compiler release, so the entry point is built here.
#include <benchmark/benchmark.h>

BENCHMARK_MAIN();
