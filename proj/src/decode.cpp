// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "qatf/errors.hpp"

namespace qatf::decode {

void BeamParams::validate() const {
  if (beam == 0) throw ConfigError("beam size must be at least 1");
  if (!(alpha >= 0.0f)) throw ConfigError(fmt::format("length penalty alpha must be >= 0, got {}", alpha));
  if (max_len == 0) throw ConfigError("max decode length must be positive");
}

double length_penalty(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace {

struct Candidate {
  std::size_t hyp;
  std::int32_t token;
  double log_prob;
};

void check_rows(const std::vector<std::vector<float>>& rows, std::size_t n, std::size_t vocab) {
  if (rows.size() != n) throw DimensionError(fmt::format("scorer returned {} rows for {} prefixes", rows.size(), n));
  for (const auto& r : rows) {
    if (r.size() != vocab) throw DimensionError(fmt::format("scorer row has {} entries, vocab is {}", r.size(), vocab));
  }
}

}  // namespace

Hypothesis beam_search(Scorer& scorer, const BeamParams& params) {
  params.validate();
  const std::size_t vocab = scorer.vocab();
  const std::size_t k = params.beam;
  struct Live {
    Prefix tokens;
    double log_prob;
  };
  std::vector<Live> live{{{}, 0.0}};
  std::vector<Hypothesis> finished;
  std::vector<Candidate> cands;

  auto better = [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; };
  // Log-probabilities only fall as a prefix grows, so a live prefix can reach
  // at most log_prob / length_penalty(max_len) when its log_prob is negative.
  auto can_improve = [&] {
    if (finished.size() < k) return true;
    const double best = std::min_element(finished.begin(), finished.end(), better)->score;
    const double lp_max = length_penalty(params.max_len, params.alpha);
    for (const Live& h : live) {
      if (std::max(h.log_prob, h.log_prob / lp_max) > best) return true;
    }
    return false;
  };

  for (std::size_t step = 1; step <= params.max_len && !live.empty() && can_improve(); ++step) {
    std::vector<Prefix> prefixes;
    for (const Live& h : live) prefixes.push_back(h.tokens);
    const auto rows = scorer.log_probs(prefixes);
    check_rows(rows, live.size(), vocab);

    cands.clear();
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t t = 0; t < vocab; ++t) {
        if (static_cast<std::int32_t>(t) == model::kPadId) continue;
        cands.push_back({h, static_cast<std::int32_t>(t), live[h].log_prob + static_cast<double>(rows[h][t])});
      }
    }
    // Rank by accumulated log-probability; ties go to the earlier hypothesis
    // and then the lower token id.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });

    std::vector<Live> next;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < k; ++rank) {
      const Candidate& c = cands[rank];
      if (c.token == model::kEosId) {
        if (rank < k && std::isfinite(c.log_prob)) {
          Hypothesis h;
          h.tokens = live[c.hyp].tokens;
          h.log_prob = c.log_prob;
          h.score = c.log_prob / length_penalty(step, params.alpha);
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      Prefix p = live[c.hyp].tokens;
      p.push_back(c.token);
      next.push_back({std::move(p), c.log_prob});
    }
    live = std::move(next);
  }

  if (!finished.empty()) {
    return *std::min_element(finished.begin(), finished.end(), better);
  }
  Hypothesis best;
  best.truncated = true;
  best.log_prob = -INFINITY;
  for (const Live& h : live) {
    if (h.log_prob > best.log_prob) {
      best.tokens = h.tokens;
      best.log_prob = h.log_prob;
    }
  }
  best.score = best.log_prob / length_penalty(best.tokens.size(), params.alpha);
  return best;
}

Hypothesis greedy(Scorer& scorer, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max decode length must be positive");
  const std::size_t vocab = scorer.vocab();
  Hypothesis h;
  for (std::size_t step = 1; step <= max_len; ++step) {
    const auto rows = scorer.log_probs({h.tokens});
    check_rows(rows, 1, vocab);
    std::size_t best = model::kPadId == 0 ? 1 : 0;
    for (std::size_t t = 0; t < vocab; ++t) {
      if (static_cast<std::int32_t>(t) == model::kPadId) continue;
      if (rows[0][t] > rows[0][best]) best = t;
    }
    h.log_prob += static_cast<double>(rows[0][best]);
    if (static_cast<std::int32_t>(best) == model::kEosId) {
      h.finished = true;
      h.score = h.log_prob;
      return h;
    }
    h.tokens.push_back(static_cast<std::int32_t>(best));
  }
  h.truncated = true;
  h.score = h.log_prob;
  return h;
}

ModelScorer::ModelScorer(model::Transformer& model, const data::Sentence& src, const model::ForwardOptions& opts)
    : model_(&model), opts_(opts), src_(data::source_matrix(src)) {
  opts_.train = false;
  Graph g(false);
  memory_ = model.encode(g, src_, opts_).memory.value();
}

std::size_t ModelScorer::vocab() const { return model_->config().vocab; }

std::vector<std::vector<float>> ModelScorer::log_probs(const std::vector<Prefix>& prefixes) {
  const std::size_t B = prefixes.size();
  if (B == 0) return {};
  std::size_t T = 0;
  for (const Prefix& p : prefixes) T = std::max(T, p.size() + 1);
  model::TokenMatrix tgt{B, T, std::vector<std::int32_t>(B * T, model::kPadId)};
  for (std::size_t r = 0; r < B; ++r) {
    tgt.ids[r * T] = model::kEosId;
    std::copy(prefixes[r].begin(), prefixes[r].end(), tgt.ids.begin() + static_cast<std::ptrdiff_t>(r * T + 1));
  }
  const std::size_t S = src_.cols, d = memory_.cols();
  Graph g(false);
  model::Encoded enc;
  enc.batch = B;
  enc.src_len = S;
  enc.src_pad.assign(B * S, 0);
  Tensor tiled({B * S, d});
  for (std::size_t r = 0; r < B; ++r) std::copy_n(memory_.ptr(), S * d, tiled.ptr() + r * S * d);
  enc.memory = g.constant(std::move(tiled));
  const Tensor& logits = model_->decode(g, enc, tgt, opts_).value();

  const std::size_t V = vocab();
  std::vector<std::vector<float>> out(B, std::vector<float>(V));
  for (std::size_t r = 0; r < B; ++r) {
    // Row of the last real position of this prefix.
    const float* row = logits.ptr() + (r * T + prefixes[r].size()) * V;
    const float mx = *std::max_element(row, row + V);
    double sum = 0.0;
    for (std::size_t t = 0; t < V; ++t) sum += std::exp(static_cast<double>(row[t] - mx));
    const float lse = mx + static_cast<float>(std::log(sum));
    for (std::size_t t = 0; t < V; ++t) out[r][t] = row[t] - lse;
  }
  return out;
}

void TableScorer::set(const Prefix& prefix, std::vector<float> probs) {
  if (probs.size() != vocab_) throw DimensionError("distribution size does not match vocab");
  table_[prefix] = std::move(probs);
}

std::vector<std::vector<float>> TableScorer::log_probs(const std::vector<Prefix>& prefixes) {
  std::vector<std::vector<float>> out;
  for (const Prefix& p : prefixes) {
    std::vector<float> row(vocab_);
    auto it = table_.find(p);
    for (std::size_t t = 0; t < vocab_; ++t) {
      const float prob = it == table_.end() ? 1.0f / static_cast<float>(vocab_) : it->second[t];
      row[t] = prob > 0.0f ? std::log(prob) : -INFINITY;
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace qatf::decode
