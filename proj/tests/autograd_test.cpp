// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/autograd.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "qatf/errors.hpp"
#include "qatf/ops.hpp"
#include "test_util.hpp"

namespace qatf {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::weighted_sum;

constexpr double kGradTol = 1e-3;

TEST(MatmulTest, IdentityLeftOperand) {
  Graph g(false);
  Var y = ops::matmul(g.constant(Tensor::matrix({{1, 0}, {0, 1}})), g.constant(Tensor::matrix({{3, 4}, {5, 6}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{3, 4}, {5, 6}}));
}

TEST(MatmulTest, RowTimesColumn) {
  Graph g(false);
  Var y = ops::matmul(g.constant(Tensor::matrix({{1, 2}})), g.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{11}}));
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  Graph g(false);
  try {
    ops::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(MatmulTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = check_gradients(
        [](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, ops::matmul(v[0], v[1])); },
        {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng)});
    EXPECT_LT(r.worst, kGradTol);
  }
}

TEST(MatmulTest, TransposedVariantGradient) {
  std::mt19937_64 rng(2);
  const auto r = check_gradients(
      [](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, ops::matmul_nt(v[0], v[1])); },
      {random_tensor({4, 5}, rng), random_tensor({3, 5}, rng)});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(SoftmaxTest, SymmetricInput) {
  Graph g(false);
  Var y = ops::softmax(g.constant(Tensor::matrix({{0, 0}})), 1);
  EXPECT_FLOAT_EQ(y.value()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.value()[1], 0.5f);
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  Graph g(false);
  Var y = ops::softmax(g.constant(Tensor::matrix({{1000, 0}})), 1);
  EXPECT_NEAR(y.value()[0], 1.0f, 1e-7);
  EXPECT_NEAR(y.value()[1], 0.0f, 1e-7);
}

TEST(SoftmaxTest, RowsSumToOne) {
  std::mt19937_64 rng(3);
  Graph g(false);
  Var y = ops::softmax(g.constant(random_tensor({3, 4}, rng, -5, 5)), 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_GT(y.value().at(r, c), 0.0f);
      s += y.value().at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(SoftmaxTest, LeadingAxis) {
  Graph g(false);
  Var y = ops::softmax(g.constant(Tensor::matrix({{0, 1}, {0, 1}})), 0);
  for (float v : y.value().data()) EXPECT_FLOAT_EQ(v, 0.5f);
  EXPECT_THROW(ops::softmax(g.constant(Tensor::matrix({{0, 1}})), 2), DimensionError);
}

TEST(SoftmaxTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (std::size_t axis : {0u, 1u}) {
    const auto r = check_gradients(
        [axis](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, ops::softmax(v[0], axis)); },
        {random_tensor({4, 6}, rng, -2, 2)});
    EXPECT_LT(r.worst, kGradTol) << "axis " << axis;
  }
}

TEST(LayerNormTest, ConstantRowBecomesZero) {
  Graph g(false);
  Var y = ops::layer_norm(g.constant(Tensor::matrix({{3, 3, 3, 3}})), g.constant(Tensor({4}, 1.0f)),
                          g.constant(Tensor({4}, 0.0f)));
  for (float v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNormTest, NormalizedRowIsUnchanged) {
  Graph g(false);
  Var y = ops::layer_norm(g.constant(Tensor::matrix({{1, -1}})), g.constant(Tensor({2}, 1.0f)),
                          g.constant(Tensor({2}, 0.0f)), 0.0f);
  EXPECT_FLOAT_EQ(y.value()[0], 1.0f);
  EXPECT_FLOAT_EQ(y.value()[1], -1.0f);
}

TEST(LayerNormTest, WidthMismatch) {
  Graph g(false);
  EXPECT_THROW(ops::layer_norm(g.constant(Tensor({2, 3})), g.constant(Tensor({4}, 1.0f)), g.constant(Tensor({4}))),
               DimensionError);
}

TEST(LayerNormTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = check_gradients(
        [](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, ops::layer_norm(v[0], v[1], v[2])); },
        {random_tensor({3, 8}, rng, -2, 2), random_tensor({8}, rng, 0.5f, 1.5f), random_tensor({8}, rng)});
    EXPECT_LT(r.worst, kGradTol);
  }
}

TEST(CrossEntropyTest, ConfidentCorrectIsZero) {
  Graph g(false);
  const std::vector<std::int32_t> t{2};
  Var l = ops::cross_entropy(g.constant(Tensor::matrix({{0, 0, 1e6f, 0}})), t, 0);
  EXPECT_NEAR(l.value()[0], 0.0f, 1e-6);
}

TEST(CrossEntropyTest, UniformIsLogVocab) {
  Graph g(false);
  const std::vector<std::int32_t> t{3, 2};
  Var l = ops::cross_entropy(g.constant(Tensor({2, 4}, 0.25f)), t, 0);
  EXPECT_NEAR(l.value()[0], std::log(4.0), 1e-6);
}

TEST(CrossEntropyTest, PadPositionsAreIgnored) {
  Graph g(false);
  const std::vector<std::int32_t> t{2, 0};
  Var l = ops::cross_entropy(g.constant(Tensor::matrix({{0, 0, 0, 0}, {50, 0, 0, 0}})), t, 0);
  EXPECT_NEAR(l.value()[0], std::log(4.0), 1e-6);
}

TEST(CrossEntropyTest, Errors) {
  Graph g(false);
  const std::vector<std::int32_t> pads{0, 0};
  EXPECT_THROW(ops::cross_entropy(g.constant(Tensor({2, 4})), pads, 0), PreconditionError);
  const std::vector<std::int32_t> bad{4, 1};
  EXPECT_THROW(ops::cross_entropy(g.constant(Tensor({2, 4})), bad, 0), IndexError);
}

TEST(CrossEntropyTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const std::vector<std::int32_t> t{1, 0, 3, 2, 4};
  const auto r = check_gradients([&t](Graph&, const std::vector<Var>& v) { return ops::cross_entropy(v[0], t, 0); },
                                 {random_tensor({5, 6}, rng, -3, 3)});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(OpsTest, AddBiasReluScaleGradients) {
  std::mt19937_64 rng(7);
  // Keep inputs away from the ReLU kink.
  Tensor x = random_tensor({4, 3}, rng, 0.1f, 1.0f);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  const auto r = check_gradients(
      [](Graph& g, const std::vector<Var>& v) {
        return weighted_sum(g, ops::scale(ops::relu(ops::add(ops::add_bias(v[0], v[1]), v[2])), 0.5f));
      },
      {x, Tensor({3}, 0.0f), random_tensor({4, 3}, rng, -0.04f, 0.04f)});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(OpsTest, EmbeddingGradientScattersRows) {
  Graph g;
  Var table = g.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  const std::vector<std::int32_t> ids{2, 0, 2};
  Var e = ops::embedding(table, ids);
  EXPECT_EQ(e.value(), Tensor::matrix({{5, 6}, {1, 2}, {5, 6}}));
  g.backward(ops::sum(e));
  EXPECT_EQ(g.grad(table), Tensor::matrix({{1, 1}, {0, 0}, {2, 2}}));
  Graph g2;
  const std::vector<std::int32_t> bad{3};
  EXPECT_THROW(ops::embedding(g2.constant(Tensor({3, 2})), bad), IndexError);
}

TEST(OpsTest, DropoutKeepsExpectation) {
  std::mt19937_64 rng(8);
  Graph g(false);
  Var y = ops::dropout(g.constant(Tensor({100000}, 1.0f)), 0.25f, rng);
  double s = 0.0;
  std::size_t zeros = 0;
  for (float v : y.value().data()) {
    s += v;
    zeros += v == 0.0f;
  }
  EXPECT_NEAR(s / 100000.0, 1.0, 0.02);
  EXPECT_NEAR(double(zeros) / 100000.0, 0.25, 0.01);
}

TEST(OpsTest, AttentionGradients) {
  std::mt19937_64 rng(9);
  ops::AttentionDims dims{2, 2, 3, 4, 4};
  Tensor mask({2, 3, 4}, 0.0f);
  mask[3] = ops::kMaskedLogit;
  const auto r = check_gradients(
      [&](Graph& g, const std::vector<Var>& v) {
        Var s = ops::attention_scores(v[0], v[1], dims, 0.5f, &mask);
        Var u = ops::softmax(s, 1);
        return weighted_sum(g, ops::attention_context(u, v[2], dims));
      },
      {random_tensor({6, 4}, rng), random_tensor({8, 4}, rng), random_tensor({8, 4}, rng)});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(BackwardTest, SumGivesOnes) {
  Graph g;
  Var x = g.leaf(Tensor({2, 3, 2}, 0.3f));
  g.backward(ops::sum(x));
  for (float v : g.grad(x).data()) EXPECT_EQ(v, 1.0f);
}

TEST(BackwardTest, SumOfProductMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const auto r = check_gradients([](Graph&, const std::vector<Var>& v) { return ops::sum(ops::matmul(v[0], v[1])); },
                                 {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  EXPECT_LT(r.worst, kGradTol);
}

TEST(BackwardTest, SecondCallThrows) {
  Graph g;
  Var x = g.leaf(Tensor({2}, 1.0f));
  Var l = ops::sum(x);
  g.backward(l);
  EXPECT_THROW(g.backward(l), SequencingError);
  g.reset();
  Var y = g.leaf(Tensor({2}, 1.0f));
  EXPECT_NO_THROW(g.backward(ops::sum(y)));
}

TEST(BackwardTest, VisitsEachNodeOnce) {
  Graph g;
  Var a = g.leaf(Tensor({2, 2}, 1.0f));
  Var b = g.leaf(Tensor({2, 2}, 2.0f));
  Var c = ops::matmul(a, b);
  Var d = ops::add(c, c);  // c is used twice but must be visited once
  Var l = ops::sum(d);
  g.backward(l);
  EXPECT_EQ(g.backward_visits(), 5u);
  EXPECT_EQ(g.grad(a), Tensor({2, 2}, 8.0f));
}

TEST(BackwardTest, ParametersAccumulateUntilZeroed) {
  Parameter p("w", Tensor({3}, 1.0f));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Var v = g.param(p);
    EXPECT_EQ(v.id, g.param(p).id);
    g.backward(ops::sum(ops::add(v, v)));
  }
  EXPECT_EQ(p.grad, Tensor({3}, 4.0f));
  p.zero_grad();
  EXPECT_EQ(p.grad, Tensor({3}, 0.0f));
}

TEST(BackwardTest, FrozenParameterGetsNoGradient) {
  Parameter p("w", Tensor({3}, 1.0f));
  p.frozen = true;
  Graph g;
  Var x = g.leaf(Tensor({3}, 2.0f));
  g.backward(ops::sum(ops::add(g.param(p), x)));
  EXPECT_EQ(p.grad, Tensor({3}, 0.0f));
  EXPECT_EQ(g.grad(x), Tensor({3}, 1.0f));
}

TEST(BackwardTest, ForwardIsDeterministic) {
  std::mt19937_64 r1(11), r2(11);
  Graph g1(false), g2(false);
  Var y1 = ops::softmax(ops::matmul(g1.constant(random_tensor({5, 7}, r1)), g1.constant(random_tensor({7, 3}, r1))), 1);
  Var y2 = ops::softmax(ops::matmul(g2.constant(random_tensor({5, 7}, r2)), g2.constant(random_tensor({7, 3}, r2))), 1);
  EXPECT_EQ(y1.value(), y2.value());
}

}  // namespace
}  // namespace qatf
