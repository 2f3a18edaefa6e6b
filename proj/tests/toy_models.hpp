// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small table-driven next-token models and an exhaustive decoder used as the
// reference for beam search.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "qatf/decode.hpp"

namespace qatf::testing {

// Every prefix of content tokens shorter than max_len gets a random
// distribution over eos and content tokens; padding has probability zero.
inline decode::TableScorer random_toy(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len) {
  decode::TableScorer s(vocab);
  std::exponential_distribution<float> gamma(1.0f);
  std::vector<decode::Prefix> level{{}};
  for (std::size_t depth = 0; depth < max_len; ++depth) {
    std::vector<decode::Prefix> next;
    for (const auto& p : level) {
      std::vector<float> probs(vocab, 0.0f);
      float sum = 0.0f;
      for (std::size_t t = 1; t < vocab; ++t) sum += probs[t] = gamma(rng);
      for (float& v : probs) v /= sum;
      s.set(p, probs);
      for (std::size_t t = 2; t < vocab; ++t) {
        next.push_back(p);
        next.back().push_back(static_cast<std::int32_t>(t));
      }
    }
    level = std::move(next);
  }
  return s;
}

// Best finished sequence of at most max_len tokens (eos included) by
// log_prob / length_penalty, found by enumeration.
inline decode::Hypothesis brute_force_best(decode::Scorer& s, std::size_t max_len, float alpha) {
  decode::Hypothesis best;
  best.score = -INFINITY;
  std::vector<std::pair<decode::Prefix, double>> level{{{}, 0.0}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::pair<decode::Prefix, double>> next;
    for (const auto& [p, lp] : level) {
      const auto row = s.log_probs({p})[0];
      const double fin = lp + row[model::kEosId];
      const double score = fin / decode::length_penalty(len, alpha);
      if (score > best.score) {
        best.tokens = p;
        best.log_prob = fin;
        best.score = score;
        best.finished = true;
      }
      for (std::size_t t = 2; t < s.vocab(); ++t) {
        auto q = p;
        q.push_back(static_cast<std::int32_t>(t));
        next.emplace_back(std::move(q), lp + row[t]);
      }
    }
    level = std::move(next);
  }
  return best;
}

struct ToyModel {
  std::string name;
  decode::TableScorer scorer;
  std::size_t max_len;
};

// Hand-built models where greedy decoding is misled but the optimum stays
// within a width-4 beam.
inline std::vector<ToyModel> crafted_toys() {
  std::vector<ToyModel> out;
  {
    // Greedy picks the likelier first token whose continuation is flat.
    decode::TableScorer s(4);
    s.set({}, {0, 0.05f, 0.55f, 0.4f});
    s.set({2}, {0, 0.3f, 0.35f, 0.35f});
    s.set({3}, {0, 0.95f, 0.03f, 0.02f});
    out.push_back({"flat_continuation", s, 3});
  }
  {
    // An early eos is likely but a longer sequence wins on score.
    decode::TableScorer s(5);
    s.set({}, {0, 0.4f, 0.3f, 0.2f, 0.1f});
    s.set({2}, {0, 0.05f, 0.9f, 0.03f, 0.02f});
    s.set({2, 2}, {0, 0.97f, 0.01f, 0.01f, 0.01f});
    out.push_back({"late_eos", s, 4});
  }
  {
    // The optimum starts with the third-ranked token.
    decode::TableScorer s(6);
    s.set({}, {0, 0.02f, 0.35f, 0.33f, 0.3f, 0});
    s.set({2}, {0, 0.2f, 0.2f, 0.2f, 0.2f, 0.2f});
    s.set({3}, {0, 0.2f, 0.2f, 0.2f, 0.2f, 0.2f});
    s.set({4}, {0, 0.02f, 0, 0, 0, 0.98f});
    s.set({4, 5}, {0, 0.99f, 0.01f, 0, 0, 0});
    out.push_back({"third_branch", s, 4});
  }
  {
    // Deep path: the winner is only visible at the last step.
    decode::TableScorer s(6);
    s.set({}, {0, 0.01f, 0.5f, 0.49f, 0, 0});
    s.set({2}, {0, 0.01f, 0.25f, 0.25f, 0.25f, 0.24f});
    s.set({3}, {0, 0.01f, 0.01f, 0.01f, 0.01f, 0.96f});
    s.set({3, 5}, {0, 0.01f, 0.01f, 0.01f, 0.97f, 0});
    s.set({3, 5, 4}, {0, 1.0f, 0, 0, 0, 0});
    out.push_back({"deep_path", s, 4});
  }
  return out;
}

}  // namespace qatf::testing
