// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam-search decoding over any next-token scorer.

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "qatf/data.hpp"
#include "qatf/model.hpp"

namespace qatf::decode {

using Prefix = std::vector<std::int32_t>;  // generated tokens, without the start symbol

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::size_t vocab() const = 0;
  // Next-token log-probabilities for each prefix, one row of vocab() values each.
  virtual std::vector<std::vector<float>> log_probs(const std::vector<Prefix>& prefixes) = 0;
};

struct BeamParams {
  std::size_t beam = 4;
  float alpha = 0.6f;
  std::size_t max_len = 32;  // generated tokens, eos included

  void validate() const;
};

// ((5 + len) / 6)^alpha.
double length_penalty(std::size_t len, double alpha);

struct Hypothesis {
  Prefix tokens;           // without eos
  double log_prob = 0.0;   // sum of token log-probabilities, eos included when finished
  double score = 0.0;      // log_prob / length_penalty(len)
  bool finished = false;   // ended with eos
  bool truncated = false;  // max_len reached without eos
};

// Beam search. A candidate ending in eos is finalized only if it ranks among
// the top `beam` candidates of its step. The search stops at max_len, or once
// `beam` hypotheses have finished and no live prefix can still beat the best
// of them. Returns the best finished hypothesis by score, or the best
// incomplete one flagged truncated.
Hypothesis beam_search(Scorer& scorer, const BeamParams& params);

// Argmax at every step (lowest id on ties) until eos or max_len.
Hypothesis greedy(Scorer& scorer, std::size_t max_len);

// Decodes one source sentence with a Transformer.
class ModelScorer : public Scorer {
 public:
  ModelScorer(model::Transformer& model, const data::Sentence& src, const model::ForwardOptions& opts);
  std::size_t vocab() const override;
  std::vector<std::vector<float>> log_probs(const std::vector<Prefix>& prefixes) override;

 private:
  model::Transformer* model_;
  model::ForwardOptions opts_;
  Tensor memory_;
  model::TokenMatrix src_;
};

// Table-driven scorer for tests: distribution per prefix, `fallback` (a
// uniform row when empty) for prefixes not in the table.
class TableScorer : public Scorer {
 public:
  explicit TableScorer(std::size_t vocab) : vocab_(vocab) {}
  void set(const Prefix& prefix, std::vector<float> probs);
  std::size_t vocab() const override { return vocab_; }
  std::vector<std::vector<float>> log_probs(const std::vector<Prefix>& prefixes) override;

 private:
  std::size_t vocab_;
  std::map<Prefix, std::vector<float>> table_;
};

}  // namespace qatf::decode
