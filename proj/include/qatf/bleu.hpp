// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus BLEU-4 over whitespace tokens, no smoothing.

#pragma once

#include <string>
#include <vector>

namespace qatf::bleu {

struct Stats {
  double precisions[4] = {0, 0, 0, 0};  // clipped n-gram precision, n = 1..4
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  double score = 0.0;  // 0..100
};

// Throws DataError for empty or mismatched lists or an empty reference.
// Uncased scoring lowercases both sides first.
Stats corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, bool cased);
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, bool cased);

}  // namespace qatf::bleu
