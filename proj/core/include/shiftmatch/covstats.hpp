// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Streaming mean / structured second-moment estimation for feature matrices.
//
// Covariance structures:
//   Full               one N x N matrix
//   PerChannelSpatial  C matrices of size HW x HW
//   KroneckerHW        per channel an H x H and a W x W factor, Cov_c = C_W (x) C_H
//   ChannelJoint       one HW x HW matrix shared by every channel
//   MeanVarOnly        per-channel scalar mean and variance
//
// Means are per feature (c, h, w) except for MeanVarOnly, whose mean and
// variance are per-channel scalars pooled over examples and positions.
// All normalizers are population form (1 / P).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shiftmatch/linalg.hpp"
#include "shiftmatch/tensor.hpp"

namespace shiftmatch {

enum class CovKind : std::uint32_t {
  Full = 0,
  PerChannelSpatial = 1,
  KroneckerHW = 2,
  ChannelJoint = 3,
  MeanVarOnly = 4,
};

std::string_view to_string(CovKind kind) noexcept;
/// Accepts the CLI spellings: full, per-channel, kron, channel-joint, meanvar.
CovKind parse_cov_kind(std::string_view text);
bool needs_layout(CovKind kind) noexcept;

/// Whether the stored pieces are covariances or their principal square roots.
enum class StatsForm : std::uint32_t { Covariance = 0, SquareRoot = 1 };

struct KronFactors {
  SymMatrix rows;  // H x H
  SymMatrix cols;  // W x W, trace normalized to W
};

/// Finalized statistics. `pieces` holds, per kind:
///   Full: [N x N]; PerChannelSpatial: C x [HW x HW];
///   KroneckerHW: [H_0, W_0, H_1, W_1, ...]; ChannelJoint: [HW x HW];
///   MeanVarOnly: C x [1 x 1] variances (std devs in SquareRoot form).
struct CovStats {
  CovKind kind = CovKind::Full;
  StatsForm form = StatsForm::Covariance;
  std::size_t features = 0;
  std::optional<Layout> layout;
  std::uint64_t count = 0;
  std::vector<double> mean;
  std::vector<SymMatrix> pieces;

  const SymMatrix& kron_rows(std::size_t c) const { return pieces.at(2 * c); }
  const SymMatrix& kron_cols(std::size_t c) const { return pieces.at(2 * c + 1); }

  friend bool operator==(const CovStats&, const CovStats&) = default;
};

/// Converts covariance pieces to principal square roots (idempotent).
CovStats square_root_form(const CovStats& stats);

class MomentAccumulator {
 public:
  MomentAccumulator(CovKind kind, std::size_t features, std::optional<Layout> layout = std::nullopt);

  template <class T>
  void add(const BasicFeatureMatrix<T>& batch);

  /// Adds rows in fixed blocks of `chunk`, so two matrices with equal rows
  /// accumulate bit-identically regardless of how they were produced.
  template <class T>
  void add_chunked(const BasicFeatureMatrix<T>& batch, std::size_t chunk);

  void merge(const MomentAccumulator& other);

  CovStats finalize() const;

  CovKind kind() const noexcept { return kind_; }
  std::size_t features() const noexcept { return features_; }
  const std::optional<Layout>& layout() const noexcept { return layout_; }
  std::uint64_t count() const noexcept { return count_; }

  // Raw sums, exposed for kron_factorize and tests.
  std::span<const double> sum() const noexcept { return sum_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return second_; }

 private:
  CovKind kind_;
  std::size_t features_;
  std::optional<Layout> layout_;
  std::uint64_t count_ = 0;
  std::vector<double> sum_;                  // N, or C for MeanVarOnly
  std::vector<std::vector<double>> second_;  // per-kind raw second moments
};

/// Per-channel Kronecker factors from a KroneckerHW accumulator:
/// C_H = (1/(P W)) sum_p Xc Xc^T and C_W = (1/(P H)) sum_p Xc^T Xc (centered),
/// then C_W is rescaled to trace W and C_H so that trace(C_H) trace(C_W)
/// equals the channel's total centered variance. A channel with no variance
/// gets C_W = I and C_H = 0.
std::vector<KronFactors> kron_factorize(const MomentAccumulator& acc);

/// One-shot estimate over a whole matrix.
template <class T>
CovStats estimate_stats(const BasicFeatureMatrix<T>& x, CovKind kind, std::size_t chunk = 1000);

// SMST: "SMST", u32 version, u32 kind, u32 form, u64 features, u32 has_layout,
// u64 C, H, W, u64 count, u64 mean length, f64[] mean, u64 piece count,
// per piece u64 order + f64[order^2]. Little-endian throughout.
inline constexpr std::uint32_t kStatsVersion = 1;

std::vector<std::uint8_t> encode_stats(const CovStats& stats);
CovStats decode_stats(std::span<const std::uint8_t> bytes);
void write_stats(const std::filesystem::path& path, const CovStats& stats);
CovStats read_stats(const std::filesystem::path& path);

}  // namespace shiftmatch
