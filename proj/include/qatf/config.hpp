// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration as a flat key = value file with [section] headers and
// '#' comments. Every key has a default; unknown sections and keys are
// rejected. `preset = desk|base|big` in [model] resets the model dimensions
// before later keys override them.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "qatf/data.hpp"
#include "qatf/decode.hpp"
#include "qatf/model.hpp"
#include "qatf/schedule.hpp"

namespace qatf::config {

struct DataSettings {
  data::TaskKind kind = data::TaskKind::reverse;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t size = 22000;
  double train_ratio = 0.9;
  double valid_ratio = 0.05;
  double test_ratio = 0.05;

  friend bool operator==(const DataSettings&, const DataSettings&) = default;
};

struct TrainSettings {
  std::size_t batch_size = 64;
  std::size_t steps = 3000;
  schedule::AdamConfig adam;
  std::size_t eval_every = 250;
  std::size_t valid_sentences = 400;
  // Stop FP32 training once validation token accuracy reaches this (0: off).
  double target_accuracy = 0.0;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct EvalSettings {
  std::size_t beam = 4;
  float alpha = 0.6f;
  std::size_t max_decode_len = 32;
  std::size_t sentences = 0;  // 0: whole split
  std::size_t select_sentences = 200;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  model::TransformerConfig model;
  DataSettings data;
  TrainSettings train;
  schedule::PhasePlan qat = default_plan();
  EvalSettings eval;

  static schedule::PhasePlan default_plan();
  // Throws ConfigError.
  void validate() const;
  data::SyntheticTask task() const;
  decode::BeamParams beam() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse(std::string_view text);
std::string serialize(const RunConfig& cfg);
RunConfig load(const std::filesystem::path& path);

}  // namespace qatf::config
