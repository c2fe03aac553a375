// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "shiftmatch/linalg.hpp"
#include "shiftmatch/tensor.hpp"

namespace shiftmatch::bench {

template <class T = double>
BasicTensor<T> randn(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(nd(rng));
  return t;
}

inline SymMatrix gram(std::size_t n, std::uint64_t seed) {
  const TensorD a = randn({2 * n, n}, seed);
  TensorD g = matmul(a, a, true, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) g.at(i, j) = g.at(j, i);
  }
  return SymMatrix::from_tensor(g);
}

}  // namespace shiftmatch::bench
