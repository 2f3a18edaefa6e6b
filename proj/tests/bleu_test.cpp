// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/bleu.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qatf/errors.hpp"

namespace qatf::bleu {
namespace {

TEST(BleuTest, HandComputedBrevityExample) {
  const Stats s = corpus_bleu({"a b c d"}, {"a b c d e"}, true);
  for (double p : s.precisions) EXPECT_DOUBLE_EQ(p, 1.0);
  EXPECT_NEAR(s.brevity_penalty, std::exp(1.0 - 5.0 / 4.0), 1e-12);
  EXPECT_NEAR(s.score, 77.88, 0.01);
  EXPECT_EQ(s.candidate_length, 4u);
  EXPECT_EQ(s.reference_length, 5u);
}

TEST(BleuTest, IdentityIsExactlyHundred) {
  const std::vector<std::string> c{"t1 t2 t3 t4", "T5 t6 t7 t8 t9", "t1 t1 t1 t1 t1 t1"};
  EXPECT_EQ(bleu(c, c, true), 100.0);
  EXPECT_EQ(bleu(c, c, false), 100.0);
}

TEST(BleuTest, NoFourGramMatchesIsZero) {
  EXPECT_EQ(bleu({"a b c d e"}, {"a b c e d"}, true), 0.0);
  EXPECT_EQ(bleu({"a b c", "x y"}, {"a b c", "x y"}, true), 0.0);
}

TEST(BleuTest, ClippedPrecision) {
  // "the" appears once in the reference, so only one of four counts.
  const Stats s = corpus_bleu({"the the the the"}, {"the cat sat on"}, true);
  EXPECT_DOUBLE_EQ(s.precisions[0], 0.25);
  EXPECT_DOUBLE_EQ(s.precisions[1], 0.0);
}

TEST(BleuTest, CorpusLevelPooling) {
  // Counts are pooled over sentences before the geometric mean.
  const Stats s = corpus_bleu({"a b c d", "e f g h"}, {"a b c d", "e f g x"}, true);
  EXPECT_DOUBLE_EQ(s.precisions[0], 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(s.precisions[1], 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(s.precisions[2], 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(s.precisions[3], 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(s.brevity_penalty, 1.0);
  EXPECT_NEAR(s.score, 100.0 * std::pow(7.0 / 8 * 5.0 / 6 * 3.0 / 4 * 1.0 / 2, 0.25), 1e-9);
}

TEST(BleuTest, CaseHandling) {
  EXPECT_EQ(bleu({"T1 T2 T3 T4"}, {"t1 t2 t3 t4"}, false), 100.0);
  EXPECT_EQ(bleu({"T1 T2 T3 T4"}, {"t1 t2 t3 t4"}, true), 0.0);
}

TEST(BleuTest, UncasedSymmetricUnderCaseFolding) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> word(0, 5), len(4, 9);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::string> cand, ref;
    for (int i = 0; i < 3; ++i) {
      std::string c, r;
      for (int j = len(rng); j > 0; --j) c += std::string(1, char('a' + word(rng))) + "b ";
      for (int j = len(rng); j > 0; --j) r += std::string(1, char('A' + word(rng))) + "B ";
      cand.push_back(c);
      ref.push_back(r);
    }
    auto upper = cand, lower = cand;
    for (auto& s : upper) std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::toupper(ch); });
    for (auto& s : lower) std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    ASSERT_EQ(bleu(upper, ref, false), bleu(lower, ref, false));
  }
}

TEST(BleuTest, Errors) {
  EXPECT_THROW(bleu({}, {}, true), DataError);
  EXPECT_THROW(bleu({"a"}, {"a", "b"}, true), DataError);
  EXPECT_THROW(bleu({"a"}, {""}, true), DataError);
  EXPECT_THROW(bleu({"a"}, {"   "}, true), DataError);
}

TEST(BleuTest, EmptyCandidateScoresZero) {
  EXPECT_EQ(bleu({""}, {"a b c d"}, true), 0.0);
}

}  // namespace
}  // namespace qatf::bleu
