// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic translation tasks and batching. Token 0 is padding, token 1 is
// end-of-sentence; content tokens are 2..vocab-1.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qatf/model.hpp"

namespace qatf::data {

enum class TaskKind { copy, reverse, lexical };

TaskKind parse_task_kind(std::string_view text);
std::string_view task_kind_name(TaskKind kind);

struct SyntheticTask {
  TaskKind kind = TaskKind::reverse;
  std::size_t vocab = 64;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::uint64_t seed = 1;

  void validate() const;
};

using Sentence = std::vector<std::int32_t>;

struct Pair {
  Sentence src;
  Sentence tgt;

  friend bool operator==(const Pair&, const Pair&) = default;
};

// Substitution table of the lexical task: a permutation of the content tokens
// derived from the task seed.
std::vector<std::int32_t> lexical_table(const SyntheticTask& task);

// The target a task assigns to `src`.
Sentence translate(const SyntheticTask& task, const Sentence& src, const std::vector<std::int32_t>& table);

// n deterministic pairs. Throws ConfigError for n == 0 or a degenerate task.
std::vector<Pair> generate(const SyntheticTask& task, std::size_t n);

struct Splits {
  std::vector<Pair> train, valid, test;
};

// Consecutive split of `pairs`; ratios must sum to 1 within 1e-9.
Splits split(const std::vector<Pair>& pairs, double train_ratio, double valid_ratio, double test_ratio);

// Tokens render as words; ids 2k and 2k+1 differ only in case ("t<k>" and
// "T<k>"), so case folding merges them.
std::string token_word(std::int32_t id);
std::int32_t word_token(std::string_view word);
std::string render(const Sentence& s);
Sentence parse_sentence(std::string_view line);

// One sentence per line, space separated.
void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences);
std::vector<Sentence> read_sentences(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& stem, const std::vector<Pair>& pairs);  // stem.src, stem.tgt
std::vector<Pair> read_pairs(const std::filesystem::path& stem);

struct Batch {
  model::TokenMatrix src;      // tokens + eos, padded
  model::TokenMatrix tgt_in;   // eos + tokens, padded
  model::TokenMatrix tgt_out;  // tokens + eos, padded
};

Batch make_batch(const std::vector<Pair>& pairs, std::size_t begin, std::size_t end);
// Single source row: tokens + eos.
model::TokenMatrix source_matrix(const Sentence& src);

// Shuffled epochs of fixed-size batches, deterministic in the rng.
class BatchStream {
 public:
  BatchStream(const std::vector<Pair>& pairs, std::size_t batch_size, std::mt19937_64 rng);
  Batch next();

 private:
  const std::vector<Pair>* pairs_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<Pair> scratch_;
};

}  // namespace qatf::data
