// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "shiftmatch/matcher.hpp"
#include "test_util.hpp"

namespace shiftmatch {
namespace {

using testing::max_abs_diff;
using testing::randn;
using testing::rel_frobenius;

// Correlated features: x = z A + offset.
FeatureMatrixD correlated(std::size_t p, Layout l, std::uint64_t seed, double shift = 0.0) {
  const std::size_t n = l.size();
  const TensorD a = randn({n, n}, seed * 31 + 1, 1.0 / std::sqrt(double(n)));
  TensorD x = matmul(randn({p, n}, seed), a);
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t j = 0; j < n; ++j) x.at(r, j) += shift + 0.05 * double(j);
  }
  return FeatureMatrixD(x, l);
}

CovStats sqrt_stats(const FeatureMatrixD& x, CovKind k) { return square_root_form(estimate_stats(x, k)); }

TEST(ShiftMatch, IdentityOnTrainingData) {
  const Layout l{2, 3, 4};
  const auto x = correlated(400, l, 1);
  for (CovKind k : {CovKind::Full, CovKind::PerChannelSpatial, CovKind::KroneckerHW, CovKind::ChannelJoint,
                    CovKind::MeanVarOnly}) {
    const auto y = shiftmatch(x, sqrt_stats(x, k), 1e-12);
    EXPECT_LT(max_abs_diff(y.tensor().values(), x.tensor().values()), 1e-8) << to_string(k);
  }
}

TEST(ShiftMatch, AcceptsCovarianceFormStats) {
  const Layout l{1, 3, 3};
  const auto x = correlated(200, l, 2);
  const auto t = correlated(200, l, 3, 1.0);
  const auto a = shiftmatch(t, estimate_stats(x, CovKind::KroneckerHW), 1e-5);
  const auto b = shiftmatch(t, sqrt_stats(x, CovKind::KroneckerHW), 1e-5);
  EXPECT_LT(max_abs_diff(a.tensor().values(), b.tensor().values()), 1e-10);
}

TEST(ShiftMatch, FullMatchesTrainingCovariance) {
  const Layout l{1, 4, 4};
  const auto train = correlated(2000, l, 4);
  const auto test = correlated(20 * 16, l, 5, 2.0);
  const CovStats tr = estimate_stats(train, CovKind::Full);
  const auto y = shiftmatch_full(test, square_root_form(tr), 0.0);
  const CovStats after = estimate_stats(y, CovKind::Full);
  EXPECT_LT(rel_frobenius(after.pieces[0].values(), tr.pieces[0].values()), 1e-10);
  EXPECT_LT(max_abs_diff(after.mean, tr.mean), 1e-10);
}

TEST(ShiftMatch, PerChannelMatchesEachChannel) {
  const Layout l{3, 2, 2};
  const auto train = correlated(500, l, 6);
  const auto test = correlated(300, l, 7, -1.0);
  const CovStats tr = estimate_stats(train, CovKind::PerChannelSpatial);
  const auto y = shiftmatch(test, square_root_form(tr), 0.0);
  const CovStats after = estimate_stats(y, CovKind::PerChannelSpatial);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_LT(rel_frobenius(after.pieces[c].values(), tr.pieces[c].values()), 1e-10);
  }
}

TEST(ShiftMatch, KronMatchesFactors) {
  // Separable test data: both factors of the output match the training factors.
  const Layout l{1, 4, 5};
  const auto train = correlated(3000, l, 8);
  const auto test = correlated(3000, l, 9, 0.5);
  const CovStats tr = estimate_stats(train, CovKind::KroneckerHW);
  const auto y = shiftmatch(test, square_root_form(tr), 0.0);
  const CovStats after = estimate_stats(y, CovKind::KroneckerHW);
  EXPECT_LT(max_abs_diff(after.mean, tr.mean), 1e-10);
  // Mean matches exactly; factors approximately, since the test data is not exactly separable.
  EXPECT_LT(rel_frobenius(after.kron_cols(0).values(), tr.kron_cols(0).values()), 0.2);
  EXPECT_LT(rel_frobenius(after.kron_rows(0).values(), tr.kron_rows(0).values()), 0.2);
}

TEST(ShiftMatch, KronUndoesSeparableShift) {
  // Separable data x = L z R: the full output covariance converges to the training one.
  const Layout l{1, 3, 4};
  const std::size_t p = 20000;
  auto separable = [&](std::uint64_t seed) {
    const TensorD lh = randn({3, 3}, seed + 1), rw = randn({4, 4}, seed + 2);
    const TensorD z = randn({p, 12}, seed + 3);
    TensorD x({p, 12});
    for (std::size_t r = 0; r < p; ++r) {
      const TensorD zr({3, 4}, std::vector<double>(z.data() + r * 12, z.data() + r * 12 + 12));
      const TensorD y = matmul(matmul(lh, zr), rw);
      std::copy(y.values().begin(), y.values().end(), x.data() + r * 12);
    }
    return FeatureMatrixD(x, l);
  };
  const auto train = separable(100), test = separable(200);
  const CovStats tr = estimate_stats(train, CovKind::Full);
  const CovStats before = estimate_stats(test, CovKind::Full);
  const auto y = shiftmatch(test, sqrt_stats(train, CovKind::KroneckerHW), 0.0);
  const CovStats after = estimate_stats(y, CovKind::Full);
  EXPECT_GT(rel_frobenius(before.pieces[0].values(), tr.pieces[0].values()), 0.5);
  EXPECT_LT(rel_frobenius(after.pieces[0].values(), tr.pieces[0].values()), 0.05);
}

TEST(ShiftMatch, MeanVarMatchesChannelMoments) {
  const Layout l{2, 3, 3};
  const auto train = correlated(300, l, 13);
  const auto test = correlated(200, l, 14, 3.0);
  const CovStats tr = estimate_stats(train, CovKind::MeanVarOnly);
  const auto y = shiftmatch_meanvar(test, tr);
  const CovStats after = estimate_stats(y, CovKind::MeanVarOnly);
  EXPECT_LT(max_abs_diff(after.mean, tr.mean), 1e-12);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(after.pieces[c](0, 0), tr.pieces[c](0, 0), 1e-12);
}

TEST(ShiftMatch, WithPrecomputedTestStats) {
  const Layout l{1, 3, 3};
  const auto train = correlated(300, l, 15), test = correlated(300, l, 16, 1.0);
  const CovStats tr = sqrt_stats(train, CovKind::Full);
  const auto a = shiftmatch(test, tr, 1e-5);
  const auto b = shiftmatch_with(test, estimate_stats(test, CovKind::Full), tr, 1e-5);
  EXPECT_EQ(a.tensor(), b.tensor());
}

TEST(ShiftMatch, Errors) {
  const Layout l{1, 2, 2};
  const auto x = correlated(50, l, 17);
  const CovStats tr = sqrt_stats(x, CovKind::Full);
  EXPECT_THROW(shiftmatch(correlated(50, Layout{1, 3, 3}, 18), tr, 1e-5), SpecError);
  EXPECT_THROW(shiftmatch(FeatureMatrixD(randn({1, 4}, 1), l), tr, 1e-5), InsufficientDataError);
  // Constant test features are singular without a ridge.
  const FeatureMatrixD flat(TensorD({10, 4}, 1.0), l);
  EXPECT_THROW(shiftmatch(flat, tr, 0.0), IllConditionedError);
  const auto y = shiftmatch(flat, tr, 1e-5);
  for (double v : y.tensor().values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Priors, EmpCovEqualsShiftEmpCov) {
  // Induced function-space covariance of f = X w, closed form.
  const auto xtr = FeatureMatrixD(randn({50, 16}, 20));
  const auto xte = FeatureMatrixD(randn({30, 16}, 21, 2.0));
  const SymMatrix sigma = prior_cov_empcov(xtr);
  const TensorD lhs = matmul(matmul(xte.tensor(), sigma.to_tensor()), xte.tensor(), false, true);
  const auto shifted = shiftempcov(xte, sym_sqrt(sigma));
  const TensorD rhs = matmul(shifted.tensor(), shifted.tensor(), false, true);
  EXPECT_LT(rel_frobenius(rhs.values(), lhs.values()), 1e-10);
}

TEST(Priors, ZellnerDiagonal) {
  // Columns with second moments 4 and 1: (1/N) diag(1/4, 1).
  const TensorD x({4, 2}, std::vector<double>{2.0, 1.0, -2.0, 1.0, 2.0, -1.0, -2.0, -1.0});
  const SymMatrix z = prior_cov_zellner(FeatureMatrixD(x), 0.0);
  EXPECT_NEAR(z(0, 0), 0.125, 1e-15);
  EXPECT_NEAR(z(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(z(0, 1), 0.0, 1e-15);
}

TEST(Priors, ZellnerIsScaledInverse) {
  const auto x = FeatureMatrixD(randn({80, 6}, 22));
  const TensorD prod = product(prior_cov_zellner(x, 0.0).to_tensor(), prior_cov_empcov(x).to_tensor());
  // (G/(N P))^-1 / N times G/(N P) = I / N^2.
  const double d = prod.at(0, 0);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(prod.at(i, j), i == j ? d : 0.0, 1e-10);
  }
  EXPECT_NEAR(d, 1.0 / 36.0, 1e-10);
}

TEST(Placement, LenetSites) {
  const LayerGraph g = lenet_s();
  EXPECT_EQ(MatchPlacement::parse(g, "pre").sites, (std::vector<std::size_t>{0, 2, 5, 8, 10}));
  EXPECT_EQ(MatchPlacement::parse(g, "post").sites, (std::vector<std::size_t>{0, 3, 6, 9, 11}));
  EXPECT_EQ(MatchPlacement::parse(g, "input-only").sites, (std::vector<std::size_t>{0}));
  EXPECT_THROW(MatchPlacement::parse(g, "everywhere"), ConfigError);
  MatchPlacement bad{Timing::Pre, Variant::AllSites, {0, 14}};
  EXPECT_THROW(bad.validate(g), SpecError);
  bad.sites = {2, 2};
  EXPECT_THROW(bad.validate(g), SpecError);
}

class MatchedForward : public ::testing::Test {
 protected:
  LayerGraph g = lenet_s();
  WeightSample s = init_sample<float>(g, 7);
  Tensor x = randn<float>({300, 1, 28, 28}, 8, 0.3);
};

TEST_F(MatchedForward, IdentityOnTrainingBatch) {
  for (const char* place : {"pre", "post", "input-only"}) {
    const MatchPlacement p = MatchPlacement::parse(g, place);
    const TrainStats st = acquire_train_stats(g, s, x, p, CovKind::KroneckerHW);
    std::size_t observed = 0;
    const Tensor out = matched_forward(g, s, st, x, 1e-10, [&](std::size_t, const FeatureMatrix& in,
                                                                const FeatureMatrix& outm) {
      ++observed;
      double m = 0.0;
      for (std::size_t i = 0; i < in.tensor().size(); ++i) {
        m = std::max(m, double(std::abs(in.tensor()[i] - outm.tensor()[i])));
      }
      EXPECT_LT(m, 1e-3);
    });
    EXPECT_EQ(observed, p.sites.size());
    const Tensor plain = forward(g, s, x).logits;
    double m = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) m = std::max(m, double(std::abs(out[i] - plain[i])));
    EXPECT_LT(m, 1e-3) << place;
  }
}

TEST_F(MatchedForward, FlatSitesUseFullCovariance) {
  const TrainStats st = acquire_train_stats(g, s, x, MatchPlacement::parse(g, "pre"), CovKind::KroneckerHW);
  EXPECT_EQ(st.sites[0].kind, CovKind::KroneckerHW);
  EXPECT_EQ(st.sites[2].kind, CovKind::KroneckerHW);
  EXPECT_EQ(st.sites[3].kind, CovKind::Full);
  EXPECT_EQ(st.sites[3].pieces[0].n(), 120u);
  EXPECT_EQ(effective_kind(g, 10, CovKind::MeanVarOnly), CovKind::MeanVarOnly);
  EXPECT_EQ(effective_kind(g, 10, CovKind::ChannelJoint), CovKind::Full);
}

TEST_F(MatchedForward, ChecksProvenance) {
  const TrainStats st = acquire_train_stats(g, s, x, MatchPlacement::parse(g, "pre"), CovKind::MeanVarOnly);
  const WeightSample other = init_sample<float>(g, 99);
  EXPECT_THROW(matched_forward(g, other, st, x), SpecError);
  EXPECT_THROW(matched_forward(mlp_s(), init_sample<float>(mlp_s(), 7), st, x), SpecError);
}

TEST_F(MatchedForward, BmaPlainIsMeanOfSoftmax) {
  const SampleSet e{s, init_sample<float>(g, 9)};
  const Tensor p = bma_predict(g, e, {}, x);
  const Tensor a = softmax(forward(g, e[0], x).logits), b = softmax(forward(g, e[1], x).logits);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], 0.5f * (a[i] + b[i]), 1e-6f);
  std::vector<TrainStats> one{acquire_train_stats(g, s, x, MatchPlacement::parse(g, "pre"), CovKind::MeanVarOnly)};
  EXPECT_THROW(bma_predict(g, e, one, x), SpecError);
}

TEST_F(MatchedForward, SmtsRoundTrip) {
  const TrainStats st = acquire_train_stats(g, s, x, MatchPlacement::parse(g, "pre"), CovKind::KroneckerHW);
  const auto bytes = encode_train_stats(st);
  EXPECT_EQ(decode_train_stats(bytes), st);
  EXPECT_EQ(encode_train_stats(decode_train_stats(bytes)), bytes);
  const auto path = std::filesystem::temp_directory_path() / "shiftmatch_test.smts";
  write_train_stats(path, st);
  EXPECT_EQ(read_train_stats(path), st);
  std::filesystem::remove(path);
  EXPECT_THROW(decode_train_stats(std::span(bytes).first(bytes.size() / 2)), FormatError);
}

TEST(Metrics, NllAccuracyArgmax) {
  const Tensor p({2, 3}, std::vector<float>{0.7f, 0.2f, 0.1f, 0.25f, 0.25f, 0.5f});
  const std::vector<std::uint32_t> y{0, 1};
  EXPECT_NEAR(categorical_nll(p, y), -(std::log(0.7) + std::log(0.25)) / 2, 1e-6);
  EXPECT_DOUBLE_EQ(accuracy(p, y), 0.5);
  EXPECT_EQ(argmax_rows(Tensor({1, 3}, std::vector<float>{0.4f, 0.4f, 0.2f})), (std::vector<std::uint32_t>{0}));
  EXPECT_THROW(categorical_nll(Tensor({1, 2}, std::vector<float>{0.2f, 0.2f}), std::vector<std::uint32_t>{0}),
               SpecError);
  // Zero probability is floored instead of producing inf.
  EXPECT_TRUE(std::isfinite(categorical_nll(Tensor({1, 2}, std::vector<float>{1.0f, 0.0f}),
                                            std::vector<std::uint32_t>{1})));
}

}  // namespace
}  // namespace shiftmatch
