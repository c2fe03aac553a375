// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Symmetric eigendecomposition and the matrix square-root family used by the
// matching transforms. All arithmetic is double precision.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "shiftmatch/tensor.hpp"

namespace shiftmatch {

/// Dense symmetric n x n matrix, row-major. Construction symmetrizes the input
/// as (A + A^T) / 2 and rejects inputs whose asymmetry exceeds 1e-5 (max-abs,
/// relative to max(1, max|a_ij|)).
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t n);
  SymMatrix(std::size_t n, std::vector<double> values);

  static SymMatrix identity(std::size_t n);
  static SymMatrix diagonal(std::span<const double> diag);
  /// Takes a square TensorD; same symmetry rules as the value constructor.
  static SymMatrix from_tensor(const TensorD& square);

  std::size_t n() const noexcept { return n_; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return a_[i * n_ + j]; }
  std::span<const double> values() const noexcept { return a_; }
  std::span<double> values() noexcept { return a_; }

  double trace() const noexcept;
  double frobenius() const noexcept;
  TensorD to_tensor() const;

  SymMatrix scaled(double c) const;

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

/// Eigenvalues in descending order; column k of `vectors` (n x n, row-major)
/// is the unit eigenvector for values[k].
struct EigPair {
  std::vector<double> values;
  TensorD vectors;
};

enum class EigMethod {
  Auto,         // Jacobi up to kJacobiMaxDim, tridiagonal QL above
  Jacobi,       // cyclic Jacobi rotations
  Tridiagonal,  // Householder reduction + implicit QL (Eigen)
};

inline constexpr std::size_t kJacobiMaxDim = 32;
inline constexpr int kJacobiMaxSweeps = 100;

EigPair sym_eig(const SymMatrix& a, EigMethod method = EigMethod::Auto);

/// V diag(f(lambda)) V^T for an eigendecomposition.
SymMatrix eig_apply(const EigPair& eig, double (*f)(double));

/// Principal square root. Eigenvalues within -1e-6 * lambda_max of zero are
/// clamped to zero; anything more negative throws NotPsdError.
SymMatrix sym_sqrt(const SymMatrix& a);

/// (A + eps I)^{-1/2} with eigenvalues clamped at zero before the shift.
/// eps == 0 on a matrix with lambda_min / lambda_max < 1e-10 throws
/// IllConditionedError; pass a ridge (see default_ridge) instead.
SymMatrix sym_invsqrt(const SymMatrix& a, double eps);

/// (A + eps I)^{-1}, same conditioning rules as sym_invsqrt.
SymMatrix sym_inverse(const SymMatrix& a, double eps);

/// Both roots from one eigendecomposition.
struct SqrtPair {
  SymMatrix sqrt;
  SymMatrix invsqrt;
};
SqrtPair sym_sqrt_pair(const SymMatrix& a, double eps);

/// Scale-relative ridge: rel * trace(A) / n.
double default_ridge(const SymMatrix& a, double rel = 1e-5);

/// Thin rank-revealing SVD: a = U diag(S) V^T with S descending. Directions
/// with singular value below 1e-7 * S_max are dropped, so U is P x r and V
/// is N x r with r the numerical rank (r >= 1 unless a == 0, then r == 0).
struct Svd {
  TensorD u;
  std::vector<double> s;
  TensorD v;
  std::size_t rank = 0;
};
Svd svd(const TensorD& a);

/// Dense products on double matrices.
TensorD product(const SymMatrix& a, const SymMatrix& b);
TensorD product(const TensorD& a, const TensorD& b);

double max_abs(std::span<const double> v) noexcept;

}  // namespace shiftmatch
