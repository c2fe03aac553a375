// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Test-time feature matching: the covariance-matching transforms, training
// statistic acquisition, matched forward passes and model averaging.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "shiftmatch/covstats.hpp"
#include "shiftmatch/linalg.hpp"
#include "shiftmatch/netmodel.hpp"
#include "shiftmatch/tensor.hpp"

namespace shiftmatch {

/// Relative ridge on the test side: eps * trace(C_test) / n per covariance piece.
inline constexpr double kDefaultEps = 1e-5;

// ---------------------------------------------------------------------------
// Prior covariances and the input transform that reproduces them

/// X_test * q_train, with q_train = sym_sqrt(X_train^T X_train / P_train).
template <class T>
BasicFeatureMatrix<T> shiftempcov(const BasicFeatureMatrix<T>& x_test, const SymMatrix& q_train);

/// X^T X / (N P).
template <class T>
SymMatrix prior_cov_empcov(const BasicFeatureMatrix<T>& x_train);

/// ((X^T X / P + eps I)^{-1}) / N.
template <class T>
SymMatrix prior_cov_zellner(const BasicFeatureMatrix<T>& x_train, double eps);

// ---------------------------------------------------------------------------
// Matching transforms. `train` may be in covariance or square-root form.
// Test statistics are estimated from h_test itself.

template <class T>
BasicFeatureMatrix<T> shiftmatch_full(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps);

template <class T>
BasicFeatureMatrix<T> shiftmatch_kron(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps);

/// Per channel (x - mu_test) / sigma_test * sigma_train + mu_train, sigmas floored at 1e-6.
template <class T>
BasicFeatureMatrix<T> shiftmatch_meanvar(const BasicFeatureMatrix<T>& h_test, const CovStats& train);

/// Dispatches on train.kind (also covers PerChannelSpatial and ChannelJoint).
template <class T>
BasicFeatureMatrix<T> shiftmatch(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps);

/// Same, with the test statistics supplied (covariance form, same kind and layout).
template <class T>
BasicFeatureMatrix<T> shiftmatch_with(const BasicFeatureMatrix<T>& h_test, const CovStats& test,
                                      const CovStats& train, double eps);

// ---------------------------------------------------------------------------
// Placement

enum class Timing : std::uint32_t { Pre = 0, Post = 1 };
enum class Variant : std::uint32_t { InputOnly = 0, AllSites = 1 };

std::string_view to_string(Timing t) noexcept;
std::string_view to_string(Variant v) noexcept;

struct MatchPlacement {
  Timing timing = Timing::Pre;
  Variant variant = Variant::AllSites;
  std::vector<std::size_t> sites;  // ascending layer-input positions

  /// Input-only: {0}. Pre: 0 and the input of every ReLU. Post: 0 and the
  /// input of every layer that follows a ReLU.
  static MatchPlacement resolve(const LayerGraph& graph, Timing timing, Variant variant);
  /// "pre", "post" or "input-only".
  static MatchPlacement parse(const LayerGraph& graph, std::string_view text);

  void validate(const LayerGraph& graph) const;
  std::string describe() const;

  friend bool operator==(const MatchPlacement&, const MatchPlacement&) = default;
};

// ---------------------------------------------------------------------------
// Training statistics

struct TrainStats {
  std::uint64_t sample_id = 0;
  std::uint64_t graph_hash = 0;
  MatchPlacement placement;
  CovKind kind = CovKind::KroneckerHW;
  std::vector<CovStats> sites;  // square-root form, one per placement site

  friend bool operator==(const TrainStats&, const TrainStats&) = default;
};

/// Covariance structure used at one site. Flat sites (1 x 1 spatial extent)
/// have no spatial axes to factor, so the structured specs fall back to Full
/// there; MeanVarOnly stays per-unit.
CovKind effective_kind(const LayerGraph& graph, std::size_t site, CovKind kind);

/// Streams x_train through the model in batches of `batch` examples and
/// accumulates statistics of the unmodified features at every site.
TrainStats acquire_train_stats(const LayerGraph& graph, const WeightSample& sample, const Tensor& x_train,
                               const MatchPlacement& placement, CovKind kind, std::size_t batch = 10000);

/// (site, features entering the site, features after matching).
using SiteObserver = std::function<void(std::size_t, const FeatureMatrix&, const FeatureMatrix&)>;

/// Logits with every placement site matched using statistics of the whole x_test batch.
Tensor matched_forward(const LayerGraph& graph, const WeightSample& sample, const TrainStats& stats,
                       const Tensor& x_test, double eps = kDefaultEps, const SiteObserver& observer = {});

/// Mean of per-sample softmax probabilities. `stats` empty means unmatched.
Tensor bma_predict(const LayerGraph& graph, std::span<const WeightSample> samples,
                   std::span<const TrainStats> stats, const Tensor& x_test, double eps = kDefaultEps);

/// -(1/P) sum log probs[p, label_p], probabilities floored at 1e-12.
double categorical_nll(const Tensor& probs, std::span<const std::uint32_t> labels);
/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& probs, std::span<const std::uint32_t> labels);
std::vector<std::uint32_t> argmax_rows(const Tensor& scores);

// SMTS: "SMTS", u32 version, u64 sample id, u64 graph hash, u32 timing,
// u32 variant, u32 site count, u64 sites, u32 kind, then per site
// u64 position, u64 block length, SMST block.
inline constexpr std::uint32_t kTrainStatsVersion = 1;

std::vector<std::uint8_t> encode_train_stats(const TrainStats& stats);
TrainStats decode_train_stats(std::span<const std::uint8_t> bytes);
void write_train_stats(const std::filesystem::path& path, const TrainStats& stats);
TrainStats read_train_stats(const std::filesystem::path& path);

}  // namespace shiftmatch
