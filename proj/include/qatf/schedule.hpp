// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimizer, learning-rate factor and the six-phase quantization fine-tuning
// that follows FP32 training:
//
//   1  weights and biases fake-quantized (range-preserving), params trained
//   2  params frozen; max |x| calibration at every threshold site, no updates
//   3  thresholds initialised from calibration, then trained; params frozen
//   4  as 3
//   5  thresholds frozen, params trained; checkpoints scored for selection
//   6  as 5
//
// Phases 1-3 are mandatory, 4-6 optional.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qatf/data.hpp"
#include "qatf/model.hpp"

namespace qatf::schedule {

// 1 / sqrt(max(t_w, t)). Throws DomainError unless t >= 1 and t_w >= 1.
float lr_factor(std::size_t t, std::size_t t_w);

struct AdamConfig {
  float base_lr = 0.03f;
  std::size_t warmup = 400;
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float eps = 1e-9f;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg, std::size_t start_step = 0);

  // Advances the global step t and updates every parameter that receives a
  // gradient and every unfrozen threshold. Returns lr_factor(t, warmup).
  float step(model::Transformer& m);
  std::size_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  // Moment buffers are dropped; the step counter continues.
  void reset_moments() { moments_.clear(); }

 private:
  struct Moments {
    std::vector<float> m, v;
    std::size_t count = 0;
  };
  void update(const void* key, std::span<float> value, std::span<const float> grad, float lr);

  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::unordered_map<const void*, Moments> moments_;
};

struct PhaseMask {
  bool params_trainable = false;
  bool thresholds_trainable = false;
  bool weights_quantized = false;
  bool acts_quantized = false;
  bool calibrate = false;

  model::QuantState quant() const { return {weights_quantized, acts_quantized, false}; }
};

// phase in 1..6. `joint` also trains parameters in phases 3-4.
PhaseMask phase_mask(int phase, bool joint = false);

struct PhasePlan {
  std::array<std::size_t, 6> steps{};
  std::array<bool, 6> enabled{true, true, true, true, true, true};
  bool joint = false;
  // Validation interval for checkpoint selection in phases 5-6 (0: phase ends only).
  std::size_t select_every = 0;

  // Throws ConfigError when a mandatory phase is disabled.
  void validate() const;
  friend bool operator==(const PhasePlan&, const PhasePlan&) = default;
};

// Running max |x| per threshold site.
struct CalibrationStats {
  std::map<std::string, float> max_abs;

  void observe(const ThresholdScalar& th, const Tensor& x);
  bool empty() const { return max_abs.empty(); }
};

// z = log2(max / p) for signed sites, log2(max / (2^b - 1)) for unsigned ones.
// Throws PreconditionError when a site has no statistics.
void init_thresholds(model::Transformer& m, const CalibrationStats& stats);

struct StepRecord {
  std::size_t step = 0;
  int phase = 0;  // 0 for FP32 training
  float loss = 0.0f;
  float lr_factor = 0.0f;
};

// "step\tphase\tloss\tlr_factor".
std::string format_record(const StepRecord& r);

// Snapshot of every parameter value and threshold z.
struct Snapshot {
  std::vector<Tensor> params;
  std::vector<float> z;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};
Snapshot capture(const model::Transformer& m);
void restore(model::Transformer& m, const Snapshot& s);
bool params_equal(const Snapshot& a, const Snapshot& b);
bool thresholds_equal(const Snapshot& a, const Snapshot& b);

// Cross-entropy over non-pad targets; with `adam`, backpropagates and updates.
// Throws DivergenceError on a non-finite loss.
float train_step(model::Transformer& m, const data::Batch& batch, const model::ForwardOptions& opts, Adam* adam,
                 float* lr_factor_out = nullptr);

// Index of the best score; ties go to the later entry. Throws
// PreconditionError on an empty history.
std::size_t select_checkpoint(const std::vector<double>& scores);

struct Candidate {
  std::size_t step = 0;
  int phase = 0;
  double score = 0.0;
  Snapshot snapshot;
};

class QatRunner {
 public:
  QatRunner(model::Transformer& m, const std::vector<data::Pair>& train, PhasePlan plan, AdamConfig adam,
            std::size_t batch_size, std::uint64_t seed, std::size_t start_step);

  // Runs `phase` (1..6); phases must follow one another, skipping only
  // disabled optional ones. Throws SequencingError otherwise.
  std::vector<StepRecord> run_phase(int phase);
  // All enabled phases in order.
  std::vector<StepRecord> run_all();

  // Scores the model for checkpoint selection in phases 5-6.
  std::function<double()> validator;
  // Receives every step record as it is produced.
  std::function<void(const StepRecord&)> on_step;

  // Restores the selected checkpoint; no-op without candidates.
  std::optional<Candidate> restore_best();

  const CalibrationStats& calibration() const { return calibration_; }
  const std::vector<Candidate>& candidates() const { return candidates_; }
  int last_phase() const { return last_phase_; }
  // Optimizer steps taken, FP32 training included.
  std::size_t step() const { return adam_.t(); }
  // Steps logged, measurement-only phase 2 included.
  std::size_t log_step() const { return log_step_; }

 private:
  void add_candidate(int phase);

  model::Transformer* model_;
  PhasePlan plan_;
  Adam adam_;
  std::size_t log_step_ = 0;
  data::BatchStream stream_;
  CalibrationStats calibration_;
  std::vector<Candidate> candidates_;
  int last_phase_ = 0;
};

}  // namespace qatf::schedule
