// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/schedule.hpp"

#include <cmath>

#include <fmt/format.h>

#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"
#include "qatf/ops.hpp"

namespace qatf::schedule {

float lr_factor(std::size_t t, std::size_t t_w) {
  if (t == 0 || t_w == 0) throw DomainError(fmt::format("lr_factor needs t >= 1 and t_w >= 1, got t={} t_w={}", t, t_w));
  return static_cast<float>(1.0 / std::sqrt(static_cast<double>(std::max(t, t_w))));
}

Adam::Adam(AdamConfig cfg, std::size_t start_step) : cfg_(cfg), t_(start_step) {
  if (!(cfg_.base_lr > 0.0f)) throw ConfigError("learning rate must be positive");
  if (cfg_.warmup == 0) throw ConfigError("warmup steps must be at least 1");
}

void Adam::update(const void* key, std::span<float> value, std::span<const float> grad, float lr) {
  Moments& mo = moments_[key];
  if (mo.m.empty()) {
    mo.m.assign(value.size(), 0.0f);
    mo.v.assign(value.size(), 0.0f);
  }
  ++mo.count;
  const auto n = static_cast<double>(mo.count);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta1), n));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta2), n));
  for (std::size_t i = 0; i < value.size(); ++i) {
    mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0f - cfg_.beta1) * grad[i];
    mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0f - cfg_.beta2) * grad[i] * grad[i];
    value[i] -= lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg_.eps);
  }
}

float Adam::step(model::Transformer& m) {
  ++t_;
  const float factor = lr_factor(t_, cfg_.warmup);
  const float lr = cfg_.base_lr * factor;
  for (Parameter* p : m.parameters()) {
    if (!p->receives_grad()) continue;
    update(p, p->value.data(), p->grad.data(), lr);
    // The integer grid a loaded checkpoint pinned no longer holds.
    p->pinned_scale = 0.0f;
  }
  for (ThresholdScalar& th : m.thresholds()) {
    if (th.frozen) continue;
    update(&th, std::span<float>(&th.z, 1), std::span<const float>(&th.grad, 1), lr);
  }
  return factor;
}

PhaseMask phase_mask(int phase, bool joint) {
  PhaseMask m;
  switch (phase) {
    case 1:
      m.params_trainable = true;
      m.weights_quantized = true;
      break;
    case 2:
      m.weights_quantized = true;
      m.calibrate = true;
      break;
    case 3:
    case 4:
      m.params_trainable = joint;
      m.thresholds_trainable = true;
      m.weights_quantized = true;
      m.acts_quantized = true;
      break;
    case 5:
    case 6:
      m.params_trainable = true;
      m.weights_quantized = true;
      m.acts_quantized = true;
      break;
    default:
      throw SequencingError(fmt::format("phase {} does not exist (expected 1..6)", phase));
  }
  return m;
}

void PhasePlan::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!enabled[static_cast<std::size_t>(i)]) throw ConfigError(fmt::format("phase {} is mandatory", i + 1));
  }
}

void CalibrationStats::observe(const ThresholdScalar& th, const Tensor& x) {
  const float mx = kernels::active().abs_max(x.ptr(), x.size());
  if (!std::isfinite(mx)) throw NumericError(fmt::format("non-finite activation at site '{}'", th.site_name));
  float& slot = max_abs[th.site_name];
  slot = std::max(slot, mx);
}

void init_thresholds(model::Transformer& m, const CalibrationStats& stats) {
  const QuantConfig cfg = m.config().quant;
  for (ThresholdScalar& th : m.thresholds()) {
    auto it = stats.max_abs.find(th.site_name);
    if (it == stats.max_abs.end()) {
      throw PreconditionError(fmt::format("no calibration statistics for site '{}'", th.site_name));
    }
    th.init_from_range(it->second, cfg.with_signed(th.is_signed));
  }
}

std::string format_record(const StepRecord& r) {
  return fmt::format("{}\t{}\t{:.6f}\t{:.8f}", r.step, r.phase, r.loss, r.lr_factor);
}

Snapshot capture(const model::Transformer& m) {
  Snapshot s;
  for (const Parameter* p : m.parameters()) s.params.push_back(p->value);
  for (const ThresholdScalar& th : m.thresholds()) s.z.push_back(th.z);
  return s;
}

void restore(model::Transformer& m, const Snapshot& s) {
  auto params = m.parameters();
  if (params.size() != s.params.size() || m.thresholds().size() != s.z.size()) {
    throw DimensionError("snapshot does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.params[i];
  for (std::size_t i = 0; i < s.z.size(); ++i) m.thresholds().at(i).z = s.z[i];
}

bool params_equal(const Snapshot& a, const Snapshot& b) { return a.params == b.params; }

bool thresholds_equal(const Snapshot& a, const Snapshot& b) { return a.z == b.z; }

float train_step(model::Transformer& m, const data::Batch& batch, const model::ForwardOptions& opts, Adam* adam,
                 float* lr_factor_out) {
  Graph g(adam != nullptr);
  Var logits = m.forward(g, batch.src, batch.tgt_in, opts);
  Var loss = ops::cross_entropy(logits, batch.tgt_out.ids, model::kPadId);
  const float value = loss.value()[0];
  if (!std::isfinite(value)) throw DivergenceError(fmt::format("training loss became {}", value));
  if (adam) {
    m.zero_grad();
    g.backward(loss);
    const float f = adam->step(m);
    if (lr_factor_out) *lr_factor_out = f;
  }
  return value;
}

std::size_t select_checkpoint(const std::vector<double>& scores) {
  if (scores.empty()) throw PreconditionError("checkpoint selection needs at least one candidate");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] >= scores[best]) best = i;
  }
  return best;
}

QatRunner::QatRunner(model::Transformer& m, const std::vector<data::Pair>& train, PhasePlan plan, AdamConfig adam,
                     std::size_t batch_size, std::uint64_t seed, std::size_t start_step)
    : model_(&m),
      plan_(plan),
      adam_(adam, start_step),
      log_step_(start_step),
      stream_(train, batch_size, model::named_stream(seed, "qat-batches")) {
  plan_.validate();
}

void QatRunner::add_candidate(int phase) {
  if (!validator) return;
  Candidate c;
  c.step = log_step_;  // matches the metrics log
  c.phase = phase;
  c.score = validator();
  c.snapshot = capture(*model_);
  candidates_.push_back(std::move(c));
}

std::vector<StepRecord> QatRunner::run_phase(int phase) {
  const PhaseMask mask = phase_mask(phase, plan_.joint);
  int expected = last_phase_ + 1;
  while (expected >= 4 && expected < phase && !plan_.enabled[static_cast<std::size_t>(expected - 1)]) ++expected;
  if (phase != expected) {
    throw SequencingError(fmt::format("phase {} cannot run after phase {}", phase, last_phase_));
  }
  if (!plan_.enabled[static_cast<std::size_t>(phase - 1)]) {
    throw SequencingError(fmt::format("phase {} is disabled in this plan", phase));
  }
  const std::size_t steps = plan_.steps[static_cast<std::size_t>(phase - 1)];
  model::Transformer& m = *model_;

  if (phase == 3 && (steps > 0 || !calibration_.empty())) {
    if (calibration_.empty()) throw PreconditionError("phase 3 needs calibration statistics from phase 2");
    init_thresholds(m, calibration_);
  }
  m.set_params_frozen(!mask.params_trainable);
  m.set_thresholds_frozen(!mask.thresholds_trainable);
  adam_.reset_moments();

  model::ForwardOptions opts;
  opts.quant = mask.quant();
  opts.train = true;
  if (mask.calibrate) {
    opts.observer = [this](const ThresholdScalar& th, const Tensor& x) { calibration_.observe(th, x); };
  }
  const bool updates = mask.params_trainable || mask.thresholds_trainable;

  std::vector<StepRecord> log;
  for (std::size_t i = 0; i < steps; ++i) {
    const data::Batch batch = stream_.next();
    StepRecord r;
    r.phase = phase;
    if (updates) {
      r.loss = train_step(m, batch, opts, &adam_, &r.lr_factor);
    } else {
      r.loss = train_step(m, batch, opts, nullptr);
      r.lr_factor = lr_factor(std::max<std::size_t>(adam_.t(), 1), adam_.config().warmup);
    }
    r.step = ++log_step_;
    log.push_back(r);
    if (on_step) on_step(r);
    if (phase >= 5 && plan_.select_every > 0 && (i + 1) % plan_.select_every == 0 && i + 1 < steps) {
      add_candidate(phase);
    }
  }
  if (phase >= 5 && steps > 0) add_candidate(phase);
  last_phase_ = phase;
  return log;
}

std::vector<StepRecord> QatRunner::run_all() {
  std::vector<StepRecord> all;
  for (int phase = 1; phase <= 6; ++phase) {
    if (!plan_.enabled[static_cast<std::size_t>(phase - 1)]) continue;
    auto log = run_phase(phase);
    all.insert(all.end(), log.begin(), log.end());
  }
  return all;
}

std::optional<Candidate> QatRunner::restore_best() {
  if (candidates_.empty()) return std::nullopt;
  std::vector<double> scores;
  for (const Candidate& c : candidates_) scores.push_back(c.score);
  const Candidate& best = candidates_[select_checkpoint(scores)];
  restore(*model_, best.snapshot);
  return best;
}

}  // namespace qatf::schedule
