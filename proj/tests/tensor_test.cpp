// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/tensor.hpp"

#include <gtest/gtest.h>

#include "qatf/errors.hpp"

namespace qatf {
namespace {

TEST(TensorTest, ShapeAndSizeAgree) {
  Tensor t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.rows(), 6u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(shape_size(t.shape()), t.size());
  for (float v : t.data()) EXPECT_EQ(v, 1.5f);
}

TEST(TensorTest, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor({3, 0}), DimensionError);
}

TEST(TensorTest, MatrixLiteral) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(m.at(1, 2), 6.0f);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(TensorTest, ReshapeKeepsData) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor r = m.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.at(2, 1), 6.0f);
  EXPECT_THROW(m.reshaped({4, 2}), DimensionError);
}

TEST(TensorTest, ShapeString) { EXPECT_EQ(shape_str({2, 3}), "[2x3]"); }

TEST(TensorTest, ValueSemantics) {
  Tensor a = Tensor::vector({1, 2});
  Tensor b = a;
  b[0] = 7.0f;
  EXPECT_EQ(a[0], 1.0f);
  EXPECT_NE(a, b);
}

}  // namespace
}  // namespace qatf
