// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/linalg.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace shiftmatch {

namespace {

using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<RowMajorD>;
using ConstMapD = Eigen::Map<const RowMajorD>;

ConstMapD view(const SymMatrix& a) {
  const auto n = static_cast<Eigen::Index>(a.n());
  return ConstMapD(a.values().data(), n, n);
}

ConstMapD view(const TensorD& t) {
  return ConstMapD(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

TensorD from_eigen(const RowMajorD& m) {
  const auto r = static_cast<std::size_t>(m.rows()), c = static_cast<std::size_t>(m.cols());
  return TensorD({r, c}, std::vector<double>(m.data(), m.data() + m.size()));
}

// Cyclic Jacobi with Rutishauser's update. `a` is overwritten with the
// (numerically) diagonal matrix, `v` accumulates the rotations.
void jacobi(std::vector<double>& a, std::vector<double>& v, std::size_t n) {
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  auto V = [&](std::size_t i, std::size_t j) -> double& { return v[i * n + j]; };

  double norm2 = 0.0;
  for (double x : a) norm2 += x * x;
  const double tol = 1e-10 * std::sqrt(norm2);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * A(p, q) * A(p, q);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
    const double off = off_norm();
    if (off <= tol) return;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        A(p, p) -= t * apq;
        A(q, q) += t * apq;
        A(p, q) = 0.0;
        A(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = A(r, p), arq = A(r, q);
          const double nrp = arp - s * (arq + tau * arp);
          const double nrq = arq + s * (arp - tau * arq);
          A(r, p) = A(p, r) = nrp;
          A(r, q) = A(q, r) = nrq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = V(r, p), vrq = V(r, q);
          V(r, p) = vrp - s * (vrq + tau * vrp);
          V(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  const double off = off_norm();
  if (off <= tol) return;
  std::ostringstream os;
  os << "Jacobi eigensolver did not converge in " << kJacobiMaxSweeps
     << " sweeps (n=" << n << ", relative off-diagonal residual " << off / std::sqrt(norm2) << ")";
  throw NumericError(os.str());
}

EigPair sorted(std::vector<double> values, const std::vector<double>& vecs, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] > values[j]; });
  EigPair out{std::vector<double>(n), TensorD({n, n})};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = values[order[k]];
    for (std::size_t r = 0; r < n; ++r) out.vectors.at(r, k) = vecs[r * n + order[k]];
  }
  return out;
}

void check_psd(const EigPair& eig, const char* op) {
  if (eig.values.empty()) return;
  const double lmax = std::max(eig.values.front(), 0.0);
  const double lmin = eig.values.back();
  if (lmin < -1e-6 * lmax || (lmax == 0.0 && lmin < 0.0)) {
    std::ostringstream os;
    os << op << ": matrix is not positive semidefinite (lambda_min=" << lmin << ", lambda_max=" << lmax << ")";
    throw NotPsdError(os.str());
  }
}

void check_conditioning(const EigPair& eig, double eps, const char* op) {
  if (eps < 0.0) throw SpecError(std::string(op) + ": ridge eps must be non-negative");
  if (eps > 0.0 || eig.values.empty()) return;
  const double lmax = std::max(eig.values.front(), 0.0);
  const double lmin = std::max(eig.values.back(), 0.0);
  if (lmax == 0.0 || lmin / lmax < 1e-10) {
    std::ostringstream os;
    os << op << ": ill-conditioned matrix (lambda_min/lambda_max=" << (lmax == 0.0 ? 0.0 : lmin / lmax)
       << "); set a positive ridge eps";
    throw IllConditionedError(os.str());
  }
}

SymMatrix apply_spectrum(const EigPair& eig, const std::vector<double>& f) {
  const std::size_t n = eig.values.size();
  const ConstMapD v = view(eig.vectors);
  RowMajorD scaled = v;
  for (std::size_t k = 0; k < n; ++k) scaled.col(static_cast<Eigen::Index>(k)) *= f[k];
  RowMajorD out = scaled * v.transpose();
  return SymMatrix(n, std::vector<double>(out.data(), out.data() + out.size()));
}

}  // namespace

SymMatrix::SymMatrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}

SymMatrix::SymMatrix(std::size_t n, std::vector<double> values) : n_(n), a_(std::move(values)) {
  if (a_.size() != n * n) {
    throw DimensionError("symmetric matrix of order " + std::to_string(n) + " given " + std::to_string(a_.size()) +
                         " values");
  }
  double scale = 1.0;
  for (double x : a_) scale = std::max(scale, std::abs(x));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double& x = a_[i * n + j];
      double& y = a_[j * n + i];
      if (std::abs(x - y) > 1e-5 * scale) {
        throw NumericError("matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
      const double m = 0.5 * (x + y);
      x = m;
      y = m;
    }
  }
}

SymMatrix SymMatrix::identity(std::size_t n) {
  SymMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SymMatrix SymMatrix::diagonal(std::span<const double> diag) {
  SymMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

SymMatrix SymMatrix::from_tensor(const TensorD& square) {
  if (square.rank() != 2 || square.dim(0) != square.dim(1)) {
    throw DimensionError("expected a square matrix, got " + shape_str(square.shape()));
  }
  return SymMatrix(square.dim(0), std::vector<double>(square.values().begin(), square.values().end()));
}

double SymMatrix::trace() const noexcept {
  double t = 0.0;
  for (std::size_t i = 0; i < n_; ++i) t += a_[i * n_ + i];
  return t;
}

double SymMatrix::frobenius() const noexcept {
  double s = 0.0;
  for (double x : a_) s += x * x;
  return std::sqrt(s);
}

TensorD SymMatrix::to_tensor() const {
  if (n_ == 0) return TensorD();
  return TensorD({n_, n_}, a_);
}

SymMatrix SymMatrix::scaled(double c) const {
  SymMatrix out = *this;
  for (double& x : out.a_) x *= c;
  return out;
}

EigPair sym_eig(const SymMatrix& a, EigMethod method) {
  const std::size_t n = a.n();
  if (n == 0) return EigPair{};
  if (method == EigMethod::Auto) method = n <= kJacobiMaxDim ? EigMethod::Jacobi : EigMethod::Tridiagonal;

  if (method == EigMethod::Jacobi) {
    std::vector<double> work(a.values().begin(), a.values().end());
    std::vector<double> vecs(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
    jacobi(work, vecs, n);
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = work[i * n + i];
    return sorted(std::move(diag), vecs, n);
  }

  Eigen::SelfAdjointEigenSolver<RowMajorD> solver(view(a));
  if (solver.info() != Eigen::Success) throw NumericError("tridiagonal QL eigensolver did not converge");
  const auto& vals = solver.eigenvalues();
  RowMajorD vecs = solver.eigenvectors();
  std::vector<double> values(vals.data(), vals.data() + n);
  return sorted(std::move(values), std::vector<double>(vecs.data(), vecs.data() + vecs.size()), n);
}

SymMatrix eig_apply(const EigPair& eig, double (*f)(double)) {
  std::vector<double> fv(eig.values.size());
  std::transform(eig.values.begin(), eig.values.end(), fv.begin(), f);
  return apply_spectrum(eig, fv);
}

SymMatrix sym_sqrt(const SymMatrix& a) {
  const EigPair eig = sym_eig(a);
  check_psd(eig, "sym_sqrt");
  return eig_apply(eig, [](double l) { return std::sqrt(std::max(l, 0.0)); });
}

SymMatrix sym_invsqrt(const SymMatrix& a, double eps) {
  const EigPair eig = sym_eig(a);
  check_psd(eig, "sym_invsqrt");
  check_conditioning(eig, eps, "sym_invsqrt");
  std::vector<double> f(eig.values.size());
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = 1.0 / std::sqrt(std::max(eig.values[k], 0.0) + eps);
  return apply_spectrum(eig, f);
}

SymMatrix sym_inverse(const SymMatrix& a, double eps) {
  const EigPair eig = sym_eig(a);
  check_psd(eig, "sym_inverse");
  check_conditioning(eig, eps, "sym_inverse");
  std::vector<double> f(eig.values.size());
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = 1.0 / (std::max(eig.values[k], 0.0) + eps);
  return apply_spectrum(eig, f);
}

SqrtPair sym_sqrt_pair(const SymMatrix& a, double eps) {
  const EigPair eig = sym_eig(a);
  check_psd(eig, "sym_sqrt_pair");
  check_conditioning(eig, eps, "sym_sqrt_pair");
  std::vector<double> root(eig.values.size()), inv(eig.values.size());
  for (std::size_t k = 0; k < root.size(); ++k) {
    const double l = std::max(eig.values[k], 0.0);
    root[k] = std::sqrt(l);
    inv[k] = 1.0 / std::sqrt(l + eps);
  }
  return {apply_spectrum(eig, root), apply_spectrum(eig, inv)};
}

double default_ridge(const SymMatrix& a, double rel) {
  if (a.n() == 0) return rel;
  const double scale = a.trace() / static_cast<double>(a.n());
  return scale > 0.0 ? rel * scale : rel;
}

Svd svd(const TensorD& a) {
  if (a.rank() != 2) throw DimensionError("svd needs a rank-2 matrix, got " + shape_str(a.shape()));
  const std::size_t p = a.dim(0), n = a.dim(1);
  const ConstMapD am = view(a);
  // Eigendecompose the smaller Gram matrix and recover the other side by projection.
  const bool tall = p >= n;
  const RowMajorD gram = tall ? RowMajorD(am.transpose() * am) : RowMajorD(am * am.transpose());
  const std::size_t g = tall ? n : p;
  const EigPair eig = sym_eig(SymMatrix(g, std::vector<double>(gram.data(), gram.data() + gram.size())));

  const double smax = std::sqrt(std::max(eig.values.front(), 0.0));
  std::size_t r = 0;
  while (r < g && smax > 0.0 && std::sqrt(std::max(eig.values[r], 0.0)) > 1e-7 * smax) ++r;

  Svd out;
  out.rank = r;
  if (r == 0) return out;
  out.s.resize(r);
  RowMajorD basis(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(r));
  const ConstMapD ev = view(eig.vectors);
  for (std::size_t k = 0; k < r; ++k) {
    out.s[k] = std::sqrt(eig.values[k]);
    basis.col(static_cast<Eigen::Index>(k)) = ev.col(static_cast<Eigen::Index>(k));
  }
  RowMajorD other = tall ? RowMajorD(am * basis) : RowMajorD(am.transpose() * basis);
  for (std::size_t k = 0; k < r; ++k) other.col(static_cast<Eigen::Index>(k)) /= out.s[k];
  if (tall) {
    out.v = from_eigen(basis);
    out.u = from_eigen(other);
  } else {
    out.u = from_eigen(basis);
    out.v = from_eigen(other);
  }
  return out;
}

TensorD product(const SymMatrix& a, const SymMatrix& b) {
  if (a.n() != b.n()) throw DimensionError("product of symmetric matrices of different order");
  return from_eigen(view(a) * view(b));
}

TensorD product(const TensorD& a, const TensorD& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("product shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  return from_eigen(view(a) * view(b));
}

double max_abs(std::span<const double> v) noexcept {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace shiftmatch
