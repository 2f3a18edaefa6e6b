// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/bleu.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "qatf/errors.hpp"

namespace qatf::bleu {
namespace {

std::vector<std::string> tokenize(const std::string& line, bool cased) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string w;
  while (in >> w) {
    if (!cased) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::map<std::vector<std::string>, std::size_t> ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

Stats corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, bool cased) {
  if (candidates.empty()) throw DataError("BLEU needs at least one sentence");
  if (candidates.size() != references.size()) {
    throw DataError(fmt::format("{} candidates but {} references", candidates.size(), references.size()));
  }
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  Stats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto cand = tokenize(candidates[i], cased);
    const auto ref = tokenize(references[i], cased);
    if (ref.empty()) throw DataError(fmt::format("reference {} is empty", i + 1));
    s.candidate_length += cand.size();
    s.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto rc = ngrams(ref, n);
      for (const auto& [gram, count] : ngrams(cand, n)) {
        auto it = rc.find(gram);
        if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    s.precisions[n] = totals[n] ? static_cast<double>(matches[n]) / static_cast<double>(totals[n]) : 0.0;
    if (matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(s.precisions[n]);
    }
  }
  const double c = static_cast<double>(s.candidate_length), r = static_cast<double>(s.reference_length);
  s.brevity_penalty = c == 0.0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  if (zero) {
    s.score = 0.0;
  } else {
    s.score = 100.0 * s.brevity_penalty * std::exp(log_sum / 4.0);
  }
  return s;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, bool cased) {
  return corpus_bleu(candidates, references, cased).score;
}

}  // namespace qatf::bleu
