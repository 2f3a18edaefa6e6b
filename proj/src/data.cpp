// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "qatf/errors.hpp"

namespace qatf::data {

TaskKind parse_task_kind(std::string_view text) {
  if (text == "copy") return TaskKind::copy;
  if (text == "reverse") return TaskKind::reverse;
  if (text == "lexical") return TaskKind::lexical;
  throw ConfigError(fmt::format("unknown task '{}' (expected copy, reverse or lexical)", text));
}

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy:
      return "copy";
    case TaskKind::reverse:
      return "reverse";
    case TaskKind::lexical:
      return "lexical";
  }
  return "?";
}

void SyntheticTask::validate() const {
  if (vocab < 3) throw ConfigError(fmt::format("task vocabulary {} too small: ids 0 and 1 are reserved", vocab));
  if (kind == TaskKind::lexical && vocab < 4) {
    throw ConfigError(fmt::format("task vocabulary {} too small for a substitution table", vocab));
  }
  if (min_len == 0 || min_len > max_len) {
    throw ConfigError(fmt::format("task length range [{}, {}] is invalid", min_len, max_len));
  }
}

std::vector<std::int32_t> lexical_table(const SyntheticTask& task) {
  task.validate();
  std::vector<std::int32_t> table(task.vocab);
  std::iota(table.begin(), table.end(), 0);
  std::mt19937_64 rng = model::named_stream(task.seed, "lexical-table");
  std::shuffle(table.begin() + 2, table.end(), rng);
  return table;
}

Sentence translate(const SyntheticTask& task, const Sentence& src, const std::vector<std::int32_t>& table) {
  switch (task.kind) {
    case TaskKind::copy:
      return src;
    case TaskKind::reverse:
      return Sentence(src.rbegin(), src.rend());
    case TaskKind::lexical: {
      Sentence out;
      out.reserve(src.size());
      for (std::int32_t t : src) out.push_back(table.at(static_cast<std::size_t>(t)));
      return out;
    }
  }
  return src;
}

std::vector<Pair> generate(const SyntheticTask& task, std::size_t n) {
  task.validate();
  if (n == 0) throw ConfigError("empty corpus: n must be at least 1");
  const auto table = task.kind == TaskKind::lexical ? lexical_table(task) : std::vector<std::int32_t>{};
  std::mt19937_64 rng = model::named_stream(task.seed, "data");
  std::uniform_int_distribution<std::size_t> length(task.min_len, task.max_len);
  std::uniform_int_distribution<std::int32_t> token(2, static_cast<std::int32_t>(task.vocab) - 1);
  std::vector<Pair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sentence src(length(rng));
    for (auto& t : src) t = token(rng);
    Sentence tgt = translate(task, src, table);
    pairs.push_back({std::move(src), std::move(tgt)});
  }
  return pairs;
}

Splits split(const std::vector<Pair>& pairs, double train_ratio, double valid_ratio, double test_ratio) {
  if (train_ratio < 0 || valid_ratio < 0 || test_ratio < 0) throw ConfigError("split ratios must be nonnegative");
  if (std::fabs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split ratios sum to {}, not 1", train_ratio + valid_ratio + test_ratio));
  }
  const std::size_t n = pairs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::llround(valid_ratio * static_cast<double>(n))));
  Splits s;
  s.train.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train),
                 pairs.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), pairs.end());
  return s;
}

std::string token_word(std::int32_t id) {
  if (id < 2) throw IndexError(fmt::format("token {} is reserved and has no word", id));
  return fmt::format("{}{}", id % 2 == 0 ? 't' : 'T', id / 2);
}

std::int32_t word_token(std::string_view word) {
  if (word.size() < 2 || (word[0] != 't' && word[0] != 'T')) throw DataError(fmt::format("unknown word '{}'", word));
  std::int32_t k = 0;
  const char* last = word.data() + word.size();
  auto [ptr, ec] = std::from_chars(word.data() + 1, last, k);
  if (ec != std::errc{} || ptr != last || k < 1) throw DataError(fmt::format("unknown word '{}'", word));
  return 2 * k + (word[0] == 'T' ? 1 : 0);
}

std::string render(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += token_word(s[i]);
  }
  return out;
}

Sentence parse_sentence(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(word_token(line.substr(i, j - i)));
    i = j;
  }
  return out;
}

void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  for (const Sentence& s : sentences) out << render(s) << '\n';
  if (!out) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      out.push_back(parse_sentence(line));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_pairs(const std::filesystem::path& stem, const std::vector<Pair>& pairs) {
  std::vector<Sentence> src, tgt;
  for (const Pair& p : pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  write_sentences(stem.string() + ".src", src);
  write_sentences(stem.string() + ".tgt", tgt);
}

std::vector<Pair> read_pairs(const std::filesystem::path& stem) {
  auto src = read_sentences(stem.string() + ".src");
  auto tgt = read_sentences(stem.string() + ".tgt");
  if (src.size() != tgt.size()) {
    throw DataError(fmt::format("'{}' has {} sources but {} targets", stem.string(), src.size(), tgt.size()));
  }
  std::vector<Pair> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty()) throw DataError(fmt::format("{}.src:{}: empty sentence", stem.string(), i + 1));
    out.push_back({std::move(src[i]), std::move(tgt[i])});
  }
  return out;
}

Batch make_batch(const std::vector<Pair>& pairs, std::size_t begin, std::size_t end) {
  if (begin >= end || end > pairs.size()) throw IndexError(fmt::format("batch [{}, {}) of {} pairs", begin, end, pairs.size()));
  std::size_t S = 0, T = 0;
  for (std::size_t i = begin; i < end; ++i) {
    S = std::max(S, pairs[i].src.size() + 1);
    T = std::max(T, pairs[i].tgt.size() + 1);
  }
  const std::size_t B = end - begin;
  Batch b;
  b.src = {B, S, std::vector<std::int32_t>(B * S, model::kPadId)};
  b.tgt_in = {B, T, std::vector<std::int32_t>(B * T, model::kPadId)};
  b.tgt_out = {B, T, std::vector<std::int32_t>(B * T, model::kPadId)};
  for (std::size_t r = 0; r < B; ++r) {
    const Pair& p = pairs[begin + r];
    std::copy(p.src.begin(), p.src.end(), b.src.ids.begin() + static_cast<std::ptrdiff_t>(r * S));
    b.src.ids[r * S + p.src.size()] = model::kEosId;
    b.tgt_in.ids[r * T] = model::kEosId;
    std::copy(p.tgt.begin(), p.tgt.end(), b.tgt_in.ids.begin() + static_cast<std::ptrdiff_t>(r * T + 1));
    std::copy(p.tgt.begin(), p.tgt.end(), b.tgt_out.ids.begin() + static_cast<std::ptrdiff_t>(r * T));
    b.tgt_out.ids[r * T + p.tgt.size()] = model::kEosId;
  }
  return b;
}

model::TokenMatrix source_matrix(const Sentence& src) {
  model::TokenMatrix m{1, src.size() + 1, src};
  m.ids.push_back(model::kEosId);
  return m;
}

BatchStream::BatchStream(const std::vector<Pair>& pairs, std::size_t batch_size, std::mt19937_64 rng)
    : pairs_(&pairs), batch_size_(batch_size), rng_(std::move(rng)), order_(pairs.size()) {
  if (pairs.empty()) throw DataError("empty corpus");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

Batch BatchStream::next() {
  scratch_.clear();
  while (scratch_.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    scratch_.push_back((*pairs_)[order_[cursor_++]]);
    if (scratch_.size() == pairs_->size()) break;
  }
  return make_batch(scratch_, 0, scratch_.size());
}

}  // namespace qatf::data
