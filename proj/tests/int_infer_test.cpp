// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/int_infer.hpp"

#include <gtest/gtest.h>

#include "equivalence.hpp"
#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"

namespace qatf::int_infer {
namespace {

using testing::random_tensor;

const QuantConfig kInt8{8, true, false};

IntTensor ints(Shape shape, std::vector<std::int32_t> data, bool is_signed = true, int bits = 8) {
  return IntTensor{std::move(shape), std::move(data), 1.0f, bits, is_signed};
}

TEST(IntMatmulTest, SingleProduct) {
  const AccTensor c = int_matmul(ints({1, 1}, {127}), ints({1, 1}, {127}));
  EXPECT_EQ(c.data, (std::vector<std::int32_t>{16129}));
}

TEST(IntMatmulTest, IdentityReturnsOperand) {
  const IntTensor b = ints({2, 3}, {1, -2, 3, 127, -127, 0});
  const AccTensor c = int_matmul(ints({2, 2}, {1, 0, 0, 1}), b);
  EXPECT_EQ(c.shape, (Shape{2, 3}));
  EXPECT_EQ(c.data, b.data);
}

TEST(IntMatmulTest, MatchesWideIntegerOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(-127, 127), du(0, 255);
  for (int t = 0; t < 100; ++t) {
    const bool unsigned_a = t % 2 == 1;
    IntTensor a = ints({8, 8}, std::vector<std::int32_t>(64), !unsigned_a);
    IntTensor b = ints({8, 8}, std::vector<std::int32_t>(64));
    for (auto& x : a.data) x = unsigned_a ? du(rng) : d(rng);
    for (auto& x : b.data) x = d(rng);
    const AccTensor c = int_matmul(a, b);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        __int128 s = 0;
        for (std::size_t p = 0; p < 8; ++p) s += static_cast<__int128>(a.data[i * 8 + p]) * b.data[p * 8 + j];
        ASSERT_EQ(static_cast<__int128>(c.data[i * 8 + j]), s);
      }
    }
  }
}

TEST(IntMatmulTest, SameResultUnderEveryKernelTable) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> d(-127, 127);
  IntTensor a = ints({5, 70}, std::vector<std::int32_t>(350));
  IntTensor b = ints({70, 13}, std::vector<std::int32_t>(910));
  for (auto& x : a.data) x = d(rng);
  for (auto& x : b.data) x = d(rng);
  AccTensor ref;
  {
    kernels::ScopedKernelOverride guard(kernels::scalar_table());
    ref = int_matmul(a, b);
  }
  EXPECT_EQ(int_matmul(a, b).data, ref.data);
}

TEST(IntMatmulTest, RejectsUnsupportedOperands) {
  EXPECT_THROW(int_matmul(ints({1, 1}, {1}, true, 12), ints({1, 1}, {1})), ConfigError);
  EXPECT_THROW(int_matmul(ints({1, 1}, {1}), ints({1, 1}, {1}, false)), ConfigError);
  EXPECT_THROW(int_matmul(ints({1, 2}, {1, 1}), ints({1, 1}, {1})), DimensionError);
}

TEST(AccumulatorBoundTest, OverflowRiskIsAConfigurationError) {
  EXPECT_NO_THROW(check_accumulator_bound(127, 127, std::size_t{1} << 15));
  EXPECT_NO_THROW(check_accumulator_bound(127, 127, 133144));
  EXPECT_THROW(check_accumulator_bound(127, 127, 133145), ConfigError);
  EXPECT_NO_THROW(check_accumulator_bound(255, 127, 66311));
  EXPECT_THROW(check_accumulator_bound(255, 127, 66312), ConfigError);
}

TEST(DenseIntTest, GridOperandsReproduceFloatProduct) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(-127, 127);
  const float sx = 0.03125f, sw = 0.0078125f;
  Tensor x({4, 16}), w({16, 8});
  for (float& v : x.data()) v = sx * float(d(rng));
  for (float& v : w.data()) v = sw * float(d(rng));
  // Make the range-preserving weight scalar exactly sw.
  w[0] = sw * 127.0f;
  const IntDenseLayer layer = IntDenseLayer::build(w, nullptr, sx, kInt8);
  EXPECT_EQ(layer.weight.scale, sw);
  EXPECT_EQ(layer.output_scale, sx * sw);
  EXPECT_EQ(layer.inv_input_scale, 1.0f / sx);
  const Tensor y = dense_forward_int(x, layer, kInt8);
  Graph g(false);
  const Tensor ref = ops::matmul(g.constant(x), g.constant(w)).value();
  EXPECT_LT(testing::max_rel_error(y, ref), 1e-5);
}

TEST(DenseIntTest, ZeroInputGivesBias) {
  const Tensor b = Tensor::vector({0.5f, -0.25f, 1.0f});
  const IntDenseLayer layer = IntDenseLayer::build(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}), &b, 0.1f, kInt8);
  ASSERT_TRUE(layer.bias.has_value());
  // The bias is stored on its range-preserving grid.
  const Tensor stored = layer.bias->dequantize();
  const Tensor y = dense_forward_int(Tensor({3, 2}, 0.0f), layer, kInt8);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(y.at(r, c), stored[c]);
      EXPECT_NEAR(y.at(r, c), b[c], layer.bias->scale / 2.0f);
    }
  }
}

TEST(DenseIntTest, TransposedWeight) {
  std::mt19937_64 rng(4);
  const Tensor w = random_tensor({5, 7}, rng);
  const Tensor x = random_tensor({3, 7}, rng);
  const IntDenseLayer layer = IntDenseLayer::build(w, nullptr, 0.01f, kInt8, true);
  EXPECT_EQ(layer.in_features(), 7u);
  EXPECT_EQ(layer.out_features(), 5u);
  EXPECT_EQ(dense_forward_int(x, layer, kInt8).shape(), (Shape{3, 5}));
}

TEST(DenseIntTest, Errors) {
  const IntDenseLayer layer = IntDenseLayer::build(Tensor({4, 2}, 0.5f), nullptr, 0.1f, kInt8);
  EXPECT_THROW(dense_forward_int(Tensor({3, 5}), layer, kInt8), DimensionError);
  EXPECT_THROW(dense_forward_int(Tensor({3, 4}), layer, QuantConfig{6, true, false}), ConfigError);
  EXPECT_THROW(IntDenseLayer::build(Tensor({4, 2}), nullptr, 0.0f, kInt8), DomainError);
  EXPECT_THROW(IntDenseLayer::build(Tensor({4, 2}), nullptr, 0.1f, QuantConfig{16, true, false}), ConfigError);
}

TEST(AttentionIntTest, MatchingKeyCopiesValueRow) {
  // One query equal to the first key; scores strongly prefer it.
  const Tensor q = Tensor::matrix({{4, 4}});
  const Tensor k = Tensor::matrix({{4, 4}, {-4, -4}});
  const Tensor v = Tensor::matrix({{1, 0}, {0, 1}});
  const IntAttentionSite site{4.0f / 127.0f, 4.0f / 127.0f, 1.0f / 255.0f, 1.0f / 127.0f, 2};
  const Tensor y = attention_forward_int(q, k, v, site, kInt8);
  const float tol = 255.0f * site.s_u * site.s_v;
  EXPECT_NEAR(y[0], 1.0f, tol);
  EXPECT_NEAR(y[1], 0.0f, tol);
}

TEST(AttentionIntTest, DequantizedWeightsSumNearOne) {
  std::mt19937_64 rng(5);
  const QuantConfig ucfg{8, false, false};
  for (int t = 0; t < 50; ++t) {
    const std::size_t len = testing::uniform_size(rng, 1, 40);
    const Tensor scores = random_tensor({3, len}, rng, -4.0f, 4.0f);
    Tensor u({3, len});
    ops::softmax_rows(scores.ptr(), u.ptr(), 3, len);
    const float s = 1.0f / 255.0f;
    const Tensor back = quantize_unsigned(u, s, ucfg).dequantize();
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < len; ++c) sum += back.at(r, c);
      EXPECT_GE(sum, 1.0 - 255.0 * s / 2.0);
      EXPECT_LE(sum, 1.0 + 255.0 * s / 2.0);
    }
  }
}

TEST(AttentionIntTest, Errors) {
  const Tensor q({2, 4}), k({3, 4}), v({3, 4});
  IntAttentionSite bad{0.0f, 1.0f, 1.0f, 1.0f, 4};
  EXPECT_THROW(attention_forward_int(q, k, v, bad, kInt8), DomainError);
  const IntAttentionSite site{1.0f, 1.0f, 1.0f, 1.0f, 3};
  EXPECT_THROW(attention_forward_int(q, k, v, site, kInt8), DimensionError);
  const IntAttentionSite ok{1.0f, 1.0f, 1.0f, 1.0f, 4};
  EXPECT_THROW(attention_forward_int(q, k, v, ok, QuantConfig{12, true, false}), ConfigError);
}

class PathEquivalence : public ::testing::TestWithParam<int> {};

TEST_P(PathEquivalence, DenseLayers) {
  std::mt19937_64 rng(100 + GetParam());
  for (int t = 0; t < 200; ++t) {
    const auto r = testing::dense_trial(rng, GetParam());
    ASSERT_LE(r.rel_error, 1e-5) << "trial " << t;
  }
}

TEST_P(PathEquivalence, AttentionSites) {
  std::mt19937_64 rng(200 + GetParam());
  for (int t = 0; t < 100; ++t) {
    const auto r = testing::attention_trial(rng, GetParam());
    ASSERT_LE(r.rel_error, 1e-5) << "trial " << t;
  }
}

INSTANTIATE_TEST_SUITE_P(Bits, PathEquivalence, ::testing::Values(8, 6),
                         [](const auto& info) { return "Int" + std::to_string(info.param); });

}  // namespace
}  // namespace qatf::int_infer
