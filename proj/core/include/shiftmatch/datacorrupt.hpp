// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Datasets: IDX loading/saving, synthetic stationary signals and the
// corruption operators used for distribution-shift experiments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "shiftmatch/tensor.hpp"

namespace shiftmatch {

template <class T>
struct BasicDataset {
  BasicTensor<T> images;  // (P, C, H, W), pixel values in [0, 1] for real data
  std::vector<std::uint32_t> labels;
  std::size_t classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
};

using Dataset = BasicDataset<float>;
using DatasetD = BasicDataset<double>;

// ---------------------------------------------------------------------------
// IDX files (optionally gzip-compressed; detected from the stream)

enum class IdxType : std::uint8_t { U8 = 0x08, F32 = 0x0D };

/// (P, 1, H, W); u8 payloads are scaled by 1/255.
Tensor read_idx_images(const std::filesystem::path& path);
std::vector<std::uint32_t> read_idx_labels(const std::filesystem::path& path);
/// Writes (P, 1, H, W) images; U8 rounds x * 255 after clamping to [0, 1].
/// A ".gz" suffix selects gzip output.
void write_idx_images(const std::filesystem::path& path, const Tensor& images, IdxType type = IdxType::U8);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels);

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes = 10);

/// First `count` examples and the rest.
template <class T>
std::pair<BasicDataset<T>, BasicDataset<T>> split(const BasicDataset<T>& data, std::size_t count);

// ---------------------------------------------------------------------------
// Real Fourier basis and stationary signals

/// Orthonormal n x n real DFT basis, columns ordered: constant, then
/// (cos k, sin k) pairs for k = 1 .. ceil(n/2) - 1, then the alternating
/// Nyquist vector when n is even.
TensorD fourier_basis_1d(std::size_t n);
/// Tensor product basis for H x W images: column a*W + b is u_a (x) v_b.
TensorD fourier_basis(std::size_t h, std::size_t w);
/// Integer frequency (k_row, k_col) of each 2-D basis column.
std::vector<std::pair<std::size_t, std::size_t>> fourier_frequencies(std::size_t h, std::size_t w);

/// 1 / sqrt(1 + k_row^2 + k_col^2) per basis column.
std::vector<double> power_law_spectrum(std::size_t h, std::size_t w);

/// x = V (spectrum .* z), z ~ N(0, I); returns (P, 1, H, W) with zero labels.
DatasetD synth_stationary(std::size_t p, std::size_t h, std::size_t w, std::span<const double> spectrum,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corruptions

/// Periodized, unit-sum Gaussian taps k[d], d = 0 .. n-1 (circular distance).
std::vector<double> periodic_gaussian(std::size_t n, double sigma);

/// HW x HW matrix C with blurred_row = row * C (symmetric).
TensorD circulant_blur_matrix(std::size_t h, std::size_t w, double sigma);

template <class T>
BasicTensor<T> circulant_blur(const BasicTensor<T>& x, double sigma);
/// Truncated at radius ceil(3 sigma), zeros outside the image.
template <class T>
BasicTensor<T> zero_padded_blur(const BasicTensor<T>& x, double sigma);
/// Adds N(0, sigma^2) and clips to [0, 1].
template <class T>
BasicTensor<T> gaussian_noise(const BasicTensor<T>& x, double sigma, std::uint64_t seed);
/// Per image: (x - mean) * alpha + mean.
template <class T>
BasicTensor<T> contrast(const BasicTensor<T>& x, double alpha);
template <class T>
BasicTensor<T> pixel_dropout(const BasicTensor<T>& x, double p, std::uint64_t seed);
/// Circular translation: out[i][j] = x[i - dy][j - dx].
template <class T>
BasicTensor<T> shift(const BasicTensor<T>& x, int dx, int dy);

struct CorruptionOp {
  enum class Kind { Identity, CirculantBlur, ZeroPadBlur, GaussianNoise, Contrast, PixelDropout, Shift };
  Kind kind = Kind::Identity;
  double param = 0.0;  // sigma, alpha or p
  int dx = 0, dy = 0;
  std::uint64_t seed = 0;

  bool linear_stationary() const noexcept;
  std::string describe() const;

  template <class T>
  BasicTensor<T> apply(const BasicTensor<T>& x) const;
};

/// Names: identity, blur (circular), zblur, noise, contrast, dropout, shift.
/// Levels 1..5.
CorruptionOp corruption_at(std::string_view name, int intensity, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Exact removal of stationary linear corruptions

enum class RemovalMode { Empirical, Population };

/// Applies the full-covariance matching transform (eps = 0) to op(test_clean)
/// and returns max_p ||x_hat_p - x_p|| / ||x_p||. Population mode uses the
/// analytic covariances V D^2 V^T and V (D D_c)^2 V^T and needs `spectrum`.
/// Only symmetric circulant operators (identity, circular blur) qualify.
double exact_removal_check(const DatasetD& train, const DatasetD& test_clean, const CorruptionOp& op,
                           RemovalMode mode, std::span<const double> spectrum = {});

}  // namespace shiftmatch
