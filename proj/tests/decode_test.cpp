// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/decode.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qatf/errors.hpp"
#include "toy_models.hpp"

namespace qatf::decode {
namespace {

using testing::brute_force_best;
using testing::random_toy;

TEST(LengthPenaltyTest, Formula) {
  EXPECT_DOUBLE_EQ(length_penalty(1, 0.6), 1.0);
  EXPECT_DOUBLE_EQ(length_penalty(7, 1.0), 2.0);
  EXPECT_NEAR(length_penalty(7, 0.6), std::pow(2.0, 0.6), 1e-15);
  EXPECT_DOUBLE_EQ(length_penalty(30, 0.0), 1.0);
}

TEST(BeamParamsTest, Validation) {
  EXPECT_THROW((BeamParams{0, 0.6f, 4}.validate()), ConfigError);
  EXPECT_THROW((BeamParams{4, -1.0f, 4}.validate()), ConfigError);
  EXPECT_THROW((BeamParams{4, 0.6f, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((BeamParams{}.validate()));
}

TEST(BeamSearchTest, GreedyTrapNeedsBeamTwo) {
  // Vocab: pad, eos, a=2, b=3. Greedy takes a (0.6) then eos at 0.4;
  // b (0.4) then eos at 1.0 scores higher.
  TableScorer s(4);
  s.set({}, {0, 0, 0.6f, 0.4f});
  s.set({2}, {0, 0.4f, 0.3f, 0.3f});
  s.set({3}, {0, 1.0f, 0, 0});
  s.set({2, 2}, {0, 1.0f, 0, 0});
  s.set({2, 3}, {0, 1.0f, 0, 0});
  const Hypothesis g = greedy(s, 2);
  EXPECT_EQ(g.tokens, (Prefix{2}));
  EXPECT_NEAR(g.log_prob, std::log(0.6 * 0.4), 1e-6);
  const Hypothesis b = beam_search(s, {2, 0.0f, 3});
  EXPECT_EQ(b.tokens, (Prefix{3}));
  EXPECT_NEAR(b.log_prob, std::log(0.4), 1e-6);
  EXPECT_TRUE(b.finished);
  EXPECT_EQ(brute_force_best(s, 3, 0.0f).tokens, b.tokens);
}

TEST(BeamSearchTest, BeamOneIsGreedy) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    TableScorer s = random_toy(rng, 6, 4);
    const Hypothesis g = greedy(s, 4);
    const Hypothesis b = beam_search(s, {1, 0.0f, 4});
    ASSERT_EQ(g.tokens, b.tokens) << "trial " << t;
    ASSERT_EQ(g.finished, b.finished);
    ASSERT_NEAR(g.log_prob, b.log_prob, 1e-9);
  }
}

TEST(BeamSearchTest, AlphaZeroRanksByLogProb) {
  // A long sequence with higher probability than the short one.
  TableScorer s(4);
  s.set({}, {0, 0.3f, 0.7f, 0});
  s.set({2}, {0, 0, 0.9f, 0.1f});
  s.set({2, 2}, {0, 1.0f, 0, 0});
  const Hypothesis h0 = beam_search(s, {2, 0.0f, 4});
  EXPECT_EQ(h0.tokens, (Prefix{2, 2}));
  EXPECT_DOUBLE_EQ(h0.score, h0.log_prob);
}

TEST(BeamSearchTest, LengthPenaltyFavoursLongerOutput) {
  // Short: p = 0.36 at length 1. Long: p = 0.33 at length 3.
  TableScorer s(4);
  s.set({}, {0, 0.36f, 0.64f, 0});
  s.set({2}, {0, 0.4845f, 0.5155f, 0});
  s.set({2, 2}, {0, 1.0f, 0, 0});
  EXPECT_EQ(beam_search(s, {2, 0.0f, 4}).tokens, Prefix{});
  const Hypothesis h = beam_search(s, {3, 1.0f, 4});
  EXPECT_EQ(h.tokens, (Prefix{2, 2}));
  EXPECT_NEAR(h.score, h.log_prob / length_penalty(3, 1.0), 1e-12);
}

TEST(BeamSearchTest, KeepsSearchingWhileLivePrefixCanWin) {
  // Beam 2 finishes [] and [3] early, but [3 2] still leads to a better end.
  TableScorer s(5);
  s.set({}, {0, 0.163f, 0.080f, 0.668f, 0.089f});
  s.set({3}, {0, 0.218f, 0.660f, 0.100f, 0.022f});
  s.set({4}, {0, 0.9f, 0.04f, 0.03f, 0.03f});
  s.set({3, 2}, {0, 0.419f, 0.241f, 0.114f, 0.226f});
  const Hypothesis b = beam_search(s, {2, 0.0f, 3});
  EXPECT_EQ(b.tokens, (Prefix{3, 2}));
  EXPECT_EQ(b.tokens, greedy(s, 3).tokens);
  EXPECT_EQ(b.tokens, brute_force_best(s, 3, 0.0f).tokens);
}

TEST(BeamSearchTest, TruncatedWithoutEos) {
  TableScorer s(3);
  s.set({}, {0, 0, 1});
  s.set({2}, {0, 0, 1});
  s.set({2, 2}, {0, 0, 1});
  const Hypothesis h = beam_search(s, {2, 0.6f, 3});
  EXPECT_TRUE(h.truncated);
  EXPECT_FALSE(h.finished);
  EXPECT_EQ(h.tokens, (Prefix{2, 2, 2}));
  const Hypothesis g = greedy(s, 3);
  EXPECT_TRUE(g.truncated);
}

TEST(BeamSearchTest, PaddingIsNeverEmitted) {
  TableScorer s(4);
  s.set({}, {0.9f, 0.05f, 0.05f, 0});
  EXPECT_EQ(greedy(s, 1).finished, true);
  const Hypothesis h = beam_search(s, {3, 0.0f, 2});
  for (auto t : h.tokens) EXPECT_NE(t, model::kPadId);
}

TEST(BeamSearchTest, ScorerRowSizeChecked) {
  class Bad : public Scorer {
   public:
    std::size_t vocab() const override { return 4; }
    std::vector<std::vector<float>> log_probs(const std::vector<Prefix>& p) override {
      return std::vector<std::vector<float>>(p.size(), std::vector<float>(3));
    }
  } bad;
  EXPECT_THROW(beam_search(bad, {}), DimensionError);
  EXPECT_THROW(greedy(bad, 3), DimensionError);
  TableScorer s(4);
  EXPECT_THROW(s.set({}, {1.0f}), DimensionError);
}

TEST(BeamSearchTest, CraftedToysMatchBruteForce) {
  for (const auto& toy : testing::crafted_toys()) {
    TableScorer s = toy.scorer;
    const Hypothesis b = beam_search(s, {4, 0.6f, toy.max_len});
    const Hypothesis o = brute_force_best(s, toy.max_len, 0.6f);
    EXPECT_EQ(b.tokens, o.tokens) << toy.name;
    EXPECT_NEAR(b.score, o.score, 1e-9) << toy.name;
  }
}

TEST(BeamSearchTest, ExhaustiveBeamEqualsBruteForce) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 300; ++t) {
    const std::size_t vocab = 3 + t % 4, len = 1 + t % 4;
    TableScorer s = random_toy(rng, vocab, len);
    const float alpha = float(t % 3) * 0.6f;
    const Hypothesis b = beam_search(s, {4096, alpha, len});
    const Hypothesis o = brute_force_best(s, len, alpha);
    ASSERT_EQ(b.tokens, o.tokens) << "trial " << t;
    ASSERT_NEAR(b.score, o.score, 1e-9);
  }
}

TEST(BeamSearchTest, BestScoreNondecreasingInBeam) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 500; ++t) {
    const std::size_t vocab = 3 + t % 4, len = 1 + t % 4;
    TableScorer s = random_toy(rng, vocab, len);
    double prev = -INFINITY;
    for (std::size_t k = 1; k <= 8; ++k) {
      const Hypothesis h = beam_search(s, {k, 0.0f, len});
      if (!h.finished) continue;
      ASSERT_GE(h.log_prob, prev - 1e-12) << "trial " << t << " beam " << k;
      prev = h.log_prob;
    }
  }
}

TEST(BeamSearchTest, Deterministic) {
  std::mt19937_64 rng(14);
  TableScorer s = random_toy(rng, 6, 4);
  const Hypothesis a = beam_search(s, {4, 0.6f, 4});
  const Hypothesis b = beam_search(s, {4, 0.6f, 4});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.score, b.score);
}

TEST(ModelScorerTest, RowsAreNormalisedAndDecodingDeterministic) {
  model::TransformerConfig c;
  c.layers = 1;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.vocab = 10;
  c.max_len = 16;
  model::Transformer m(c, 2);
  ModelScorer s(m, {2, 3, 4}, {});
  const auto rows = s.log_probs({{}, {5}, {5, 6, 7}});
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    double sum = 0.0;
    for (float v : r) sum += std::exp(double(v));
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
  // Batched rows match single-prefix rows.
  const auto single = s.log_probs({{5, 6, 7}});
  for (std::size_t t = 0; t < 10; ++t) EXPECT_NEAR(single[0][t], rows[2][t], 1e-5);
  const Hypothesis a = beam_search(s, {4, 0.6f, 8});
  ModelScorer s2(m, {2, 3, 4}, {});
  const Hypothesis b = beam_search(s2, {4, 0.6f, 8});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.score, b.score);
}

}  // namespace
}  // namespace qatf::decode
