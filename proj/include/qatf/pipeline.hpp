// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end steps shared by the command-line tool and the acceptance runner:
// corpus generation, FP32 training, quantization fine-tuning and evaluation.

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "qatf/checkpoint.hpp"
#include "qatf/config.hpp"
#include "qatf/data.hpp"
#include "qatf/decode.hpp"
#include "qatf/model.hpp"
#include "qatf/schedule.hpp"

namespace qatf::pipeline {

using StepCallback = std::function<void(const schedule::StepRecord&)>;

data::Splits generate_corpus(const config::RunConfig& cfg);
// Writes train/valid/test .src/.tgt files into dir.
void write_corpus(const std::filesystem::path& dir, const data::Splits& splits);
data::Splits read_corpus(const std::filesystem::path& dir);

std::unique_ptr<model::Transformer> make_model(const config::RunConfig& cfg);

// Teacher-forced token accuracy over `pairs` (at most `limit`, 0 = all).
model::Accuracy token_accuracy(model::Transformer& m, const std::vector<data::Pair>& pairs, model::Mode mode,
                               std::size_t limit = 0, std::size_t batch_size = 100);

// Token-weighted mean cross-entropy over `pairs` (at most `limit`, 0 = all).
double mean_loss(model::Transformer& m, const std::vector<data::Pair>& pairs, const model::QuantState& quant,
                 std::size_t limit = 0, std::size_t batch_size = 100);

struct TrainReport {
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  std::size_t best_step = 0;
  double best_accuracy = 0.0;
  bool reached_target = false;
  double seconds = 0.0;
  std::vector<schedule::StepRecord> log;
};

// FP32 training from `start_step` up to cfg.train.steps total optimizer steps.
// Validation accuracy is measured every eval_every steps; the best state is
// restored at the end.
TrainReport train_fp32(model::Transformer& m, const config::RunConfig& cfg, const data::Splits& data,
                       std::size_t start_step = 0, const StepCallback& on_step = {});

struct PhaseReport {
  int phase = 0;
  std::vector<schedule::StepRecord> log;
  bool params_unchanged = false;
  bool thresholds_unchanged = false;
  // Validation loss of the model as the phase left it, in the phase's
  // quantization state.
  double end_loss = 0.0;
  double seconds = 0.0;
};

struct QatReport {
  std::vector<PhaseReport> phases;
  std::optional<schedule::Candidate> selected;
  std::vector<double> candidate_scores;
  std::size_t last_step = 0;
  double seconds = 0.0;

  const PhaseReport* phase(int p) const;
};

// Phases 1-6 on an FP32-trained model; its quant config selects the bit-width.
QatReport run_qat(model::Transformer& m, const config::RunConfig& cfg, const data::Splits& data, std::size_t start_step,
                  const StepCallback& on_step = {});

struct EvalReport {
  double bleu_cased = 0.0;
  double bleu_uncased = 0.0;
  double token_accuracy = 0.0;
  std::size_t sentences = 0;
  std::size_t truncated = 0;
  std::vector<data::Sentence> hypotheses;
};

// Beam-decodes the first `limit` pairs (0 = all) in `mode`.
EvalReport evaluate(model::Transformer& m, const std::vector<data::Pair>& pairs, model::Mode mode,
                    const decode::BeamParams& beam, std::size_t limit = 0);

// Checkpoint with the run config and metadata: kind (fp32 or int), step, bits.
checkpoint::Checkpoint make_checkpoint(const model::Transformer& m, const config::RunConfig& cfg, bool integer,
                                       std::size_t step);
// Builds the model a checkpoint describes and loads it.
std::unique_ptr<model::Transformer> load_model(const checkpoint::Checkpoint& ckpt, config::RunConfig* cfg_out = nullptr);

}  // namespace qatf::pipeline
