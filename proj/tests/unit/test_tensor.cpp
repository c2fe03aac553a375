// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "shiftmatch/tensor.hpp"
#include "test_util.hpp"

namespace shiftmatch {
namespace {

using testing::randn;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t[23], 1.5f);
  EXPECT_THROW(t.dim(3), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_EQ(shape_str({2, 3}), "[2,3]");
}

TEST(Tensor, ReshapeKeepsValues) {
  TensorD t = randn({2, 3, 4, 5}, 1);
  TensorD r = t.reshaped({6, 20});
  EXPECT_EQ(r.dim(0), 6u);
  EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), r.values().begin()));
  EXPECT_THROW(t.reshaped({7, 20}), DimensionError);
}

TEST(FeatureMatrix, BatchRoundTrip) {
  TensorD x = randn({5, 3, 4, 2}, 2);
  auto f = FeatureMatrixD::from_batch(x);
  EXPECT_EQ(f.rows(), 5u);
  EXPECT_EQ(f.cols(), 24u);
  EXPECT_EQ(*f.layout(), (Layout{3, 4, 2}));
  EXPECT_EQ(f(1, 5), x.at(1, 0, 2, 1));
  EXPECT_EQ(std::move(f).to_batch(), x);

  auto flat = FeatureMatrixD::from_batch(randn({4, 7}, 3));
  EXPECT_EQ(flat.layout()->channels, 7u);
  EXPECT_EQ(std::move(flat).to_batch().rank(), 2u);
  EXPECT_THROW(FeatureMatrixD(randn({4, 6}, 4), Layout{2, 2, 2}), DimensionError);
}

TEST(Matmul, MatchesNaiveAllTransposes) {
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const TensorD a = ta ? randn({7, 5}, 10) : randn({5, 7}, 10);
      const TensorD b = tb ? randn({3, 7}, 11) : randn({7, 3}, 11);
      const TensorD c = matmul(a, b, ta, tb);
      ASSERT_EQ(c.shape(), (Shape{5, 3}));
      for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < 7; ++k) s += (ta ? a.at(k, i) : a.at(i, k)) * (tb ? b.at(j, k) : b.at(k, j));
          EXPECT_NEAR(c.at(i, j), s, 1e-12);
        }
      }
    }
  }
  EXPECT_THROW(matmul(randn({2, 3}, 1), randn({2, 3}, 2)), DimensionError);
}

TEST(Conv2d, ExtentFormula) {
  EXPECT_EQ(conv_output_extent(28, 5, {1, 2, false}), 28u);
  EXPECT_EQ(conv_output_extent(14, 5, {1, 0, false}), 10u);
  EXPECT_EQ(conv_output_extent(7, 3, {2, 1, false}), 4u);
  EXPECT_THROW(conv_output_extent(3, 5, {}), DimensionError);
  EXPECT_THROW(conv_output_extent(3, 1, {0, 0, false}), DimensionError);
}

TEST(Conv2d, Im2colMatchesDirect) {
  const TensorD x = randn({3, 2, 9, 8}, 20);
  const TensorD w = randn({4, 2, 3, 3}, 21);
  for (const Conv2dOptions opt : {Conv2dOptions{1, 0, false}, Conv2dOptions{1, 1, false}, Conv2dOptions{2, 1, false},
                                  Conv2dOptions{1, 1, true}, Conv2dOptions{1, 2, true}}) {
    const TensorD fast = conv2d(x, w, opt);
    const TensorD slow = conv2d_direct(x, w, opt);
    ASSERT_EQ(fast.shape(), slow.shape());
    EXPECT_LT(testing::max_abs_diff(fast.values(), slow.values()), 1e-12);
  }
  EXPECT_THROW(conv2d(x, randn({4, 3, 3, 3}, 22)), DimensionError);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  const TensorD x = randn({2, 1, 6, 6}, 30);
  TensorD w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  EXPECT_EQ(conv2d(x, w, {1, 1, false}), x);
}

TEST(Conv2d, Col2imIsAdjointOfIm2col) {
  // <im2col(x), c> == <x, col2im(c)>
  const Conv2dOptions opt{1, 1, false};
  const TensorD x = randn({2, 2, 5, 5}, 40);
  const TensorD cols = im2col(x, 0, 2, 3, 3, opt);
  const TensorD c = randn(cols.shape(), 41);
  TensorD back(x.shape());
  col2im(c, back, 0, 2, 3, 3, opt);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) lhs += cols[i] * c[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(ReduceMean, ColumnMeans) {
  const TensorD x({3, 2}, std::vector<double>{1, 10, 2, 20, 6, 30});
  const auto m = reduce_mean(FeatureMatrixD(x));
  EXPECT_DOUBLE_EQ(m[0], 3.0);
  EXPECT_DOUBLE_EQ(m[1], 20.0);
}

}  // namespace
}  // namespace shiftmatch
