// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/pipeline.hpp"

#include <chrono>

#include <fmt/format.h>

#include "qatf/bleu.hpp"
#include "qatf/errors.hpp"
#include "qatf/ops.hpp"

namespace qatf::pipeline {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

model::ForwardOptions eval_options(model::Transformer& m, model::Mode mode) {
  model::ForwardOptions opts;
  opts.quant = model::QuantState::for_mode(mode);
  if (opts.quant.integer) m.prepare_integer_inference();
  return opts;
}

std::size_t clamp_limit(std::size_t limit, std::size_t n) { return limit == 0 ? n : std::min(limit, n); }

}  // namespace

data::Splits generate_corpus(const config::RunConfig& cfg) {
  cfg.validate();
  const auto pairs = data::generate(cfg.task(), cfg.data.size);
  return data::split(pairs, cfg.data.train_ratio, cfg.data.valid_ratio, cfg.data.test_ratio);
}

void write_corpus(const std::filesystem::path& dir, const data::Splits& splits) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  data::write_pairs(dir / "train", splits.train);
  data::write_pairs(dir / "valid", splits.valid);
  data::write_pairs(dir / "test", splits.test);
}

data::Splits read_corpus(const std::filesystem::path& dir) {
  data::Splits s;
  s.train = data::read_pairs(dir / "train");
  s.valid = data::read_pairs(dir / "valid");
  s.test = data::read_pairs(dir / "test");
  if (s.train.empty()) throw DataError(fmt::format("'{}' has an empty training split", dir.string()));
  return s;
}

std::unique_ptr<model::Transformer> make_model(const config::RunConfig& cfg) {
  return std::make_unique<model::Transformer>(cfg.model, cfg.seed);
}

model::Accuracy token_accuracy(model::Transformer& m, const std::vector<data::Pair>& pairs, model::Mode mode,
                               std::size_t limit, std::size_t batch_size) {
  const std::size_t n = clamp_limit(limit, pairs.size());
  const model::ForwardOptions opts = eval_options(m, mode);
  model::Accuracy total;
  for (std::size_t b = 0; b < n; b += batch_size) {
    const data::Batch batch = data::make_batch(pairs, b, std::min(n, b + batch_size));
    Graph g(false);
    const Tensor& logits = m.forward(g, batch.src, batch.tgt_in, opts).value();
    const model::Accuracy a = model::token_accuracy(logits, batch.tgt_out);
    total.correct += a.correct;
    total.total += a.total;
  }
  return total;
}

double mean_loss(model::Transformer& m, const std::vector<data::Pair>& pairs, const model::QuantState& quant,
                 std::size_t limit, std::size_t batch_size) {
  const std::size_t n = clamp_limit(limit, pairs.size());
  if (n == 0) throw DataError("nothing to evaluate");
  model::ForwardOptions opts;
  opts.quant = quant;
  if (quant.integer) m.prepare_integer_inference();
  double sum = 0.0;
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < n; b += batch_size) {
    const data::Batch batch = data::make_batch(pairs, b, std::min(n, b + batch_size));
    std::size_t real = 0;
    for (std::int32_t id : batch.tgt_out.ids) real += id != model::kPadId;
    Graph g(false);
    const Var logits = m.forward(g, batch.src, batch.tgt_in, opts);
    sum += static_cast<double>(ops::cross_entropy(logits, batch.tgt_out.ids, model::kPadId).value()[0]) *
           static_cast<double>(real);
    tokens += real;
  }
  return sum / static_cast<double>(tokens);
}

TrainReport train_fp32(model::Transformer& m, const config::RunConfig& cfg, const data::Splits& data,
                       std::size_t start_step, const StepCallback& on_step) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.first_step = start_step;
  report.last_step = start_step;
  // Streams are keyed by the start step so a resumed run sees fresh batches.
  data::BatchStream stream(data.train, cfg.train.batch_size,
                           model::named_stream(cfg.seed, fmt::format("batches@{}", start_step)));
  std::mt19937_64 dropout_rng = model::named_stream(cfg.seed, fmt::format("dropout@{}", start_step));
  schedule::Adam adam(cfg.train.adam, start_step);
  m.set_params_frozen(false);
  m.set_thresholds_frozen(true);

  model::ForwardOptions opts;
  opts.train = true;
  opts.rng = &dropout_rng;

  std::optional<schedule::Snapshot> best;
  report.best_accuracy = -1.0;
  report.best_step = start_step;
  while (adam.t() < cfg.train.steps) {
    const data::Batch batch = stream.next();
    schedule::StepRecord r;
    r.phase = 0;
    r.loss = schedule::train_step(m, batch, opts, &adam, &r.lr_factor);
    r.step = adam.t();
    report.log.push_back(r);
    if (on_step) on_step(r);
    report.last_step = adam.t();
    const bool last = adam.t() >= cfg.train.steps;
    if ((adam.t() - start_step) % cfg.train.eval_every == 0 || last) {
      const double acc =
          token_accuracy(m, data.valid, model::Mode::fp32, cfg.train.valid_sentences, cfg.train.batch_size).value();
      if (acc > report.best_accuracy) {
        report.best_accuracy = acc;
        report.best_step = adam.t();
        best = schedule::capture(m);
      }
      if (cfg.train.target_accuracy > 0.0 && acc >= cfg.train.target_accuracy) {
        report.reached_target = true;
        break;
      }
    }
  }
  if (best) schedule::restore(m, *best);
  if (report.best_accuracy < 0.0) report.best_accuracy = 0.0;
  report.seconds = seconds_since(t0);
  return report;
}

const PhaseReport* QatReport::phase(int p) const {
  for (const PhaseReport& r : phases) {
    if (r.phase == p) return &r;
  }
  return nullptr;
}

QatReport run_qat(model::Transformer& m, const config::RunConfig& cfg, const data::Splits& data,
                  std::size_t start_step, const StepCallback& on_step) {
  const auto t0 = std::chrono::steady_clock::now();
  if (m.config().quant.bits != cfg.model.quant.bits) {
    throw ConfigError(fmt::format("model is configured for {} bits but the run asks for {}", m.config().quant.bits,
                                  cfg.model.quant.bits));
  }
  schedule::QatRunner runner(m, data.train, cfg.qat, cfg.train.adam, cfg.train.batch_size, cfg.seed, start_step);
  const decode::BeamParams beam = cfg.beam();
  const std::size_t select_n = cfg.eval.select_sentences;
  runner.validator = [&m, &data, beam, select_n] {
    return evaluate(m, data.valid, model::Mode::fake_quant, beam, select_n).bleu_cased;
  };
  runner.on_step = on_step;

  QatReport report;
  for (int phase = 1; phase <= 6; ++phase) {
    if (!cfg.qat.enabled[static_cast<std::size_t>(phase - 1)]) continue;
    const auto p0 = std::chrono::steady_clock::now();
    const schedule::Snapshot before = schedule::capture(m);
    PhaseReport pr;
    pr.phase = phase;
    pr.log = runner.run_phase(phase);
    // Candidates snapshot the model after each validation, so compare against
    // the state as the phase left it.
    const schedule::Snapshot after = schedule::capture(m);
    pr.params_unchanged = schedule::params_equal(before, after);
    pr.thresholds_unchanged = schedule::thresholds_equal(before, after);
    pr.end_loss = mean_loss(m, data.valid, schedule::phase_mask(phase, cfg.qat.joint).quant());
    pr.seconds = seconds_since(p0);
    report.phases.push_back(std::move(pr));
  }
  for (const schedule::Candidate& c : runner.candidates()) report.candidate_scores.push_back(c.score);
  report.selected = runner.restore_best();
  report.last_step = runner.step();
  report.seconds = seconds_since(t0);
  return report;
}

EvalReport evaluate(model::Transformer& m, const std::vector<data::Pair>& pairs, model::Mode mode,
                    const decode::BeamParams& beam, std::size_t limit) {
  const std::size_t n = clamp_limit(limit, pairs.size());
  if (n == 0) throw DataError("nothing to evaluate");
  const model::ForwardOptions opts = eval_options(m, mode);
  EvalReport report;
  report.sentences = n;
  std::vector<std::string> candidates, references;
  for (std::size_t i = 0; i < n; ++i) {
    decode::ModelScorer scorer(m, pairs[i].src, opts);
    decode::Hypothesis h = decode::beam_search(scorer, beam);
    report.truncated += h.truncated ? 1 : 0;
    candidates.push_back(data::render(h.tokens));
    references.push_back(data::render(pairs[i].tgt));
    report.hypotheses.push_back(std::move(h.tokens));
  }
  report.bleu_cased = bleu::bleu(candidates, references, true);
  report.bleu_uncased = bleu::bleu(candidates, references, false);
  std::vector<data::Pair> subset(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n));
  report.token_accuracy = token_accuracy(m, subset, mode).value();
  return report;
}

checkpoint::Checkpoint make_checkpoint(const model::Transformer& m, const config::RunConfig& cfg, bool integer,
                                       std::size_t step) {
  config::RunConfig snapshot = cfg;
  snapshot.model.quant = m.config().quant;
  checkpoint::Checkpoint ckpt = integer ? checkpoint::export_int(m) : checkpoint::export_fp32(m);
  ckpt.config_text = config::serialize(snapshot);
  ckpt.metadata["kind"] = integer ? "int" : "fp32";
  ckpt.metadata["step"] = fmt::format("{}", step);
  ckpt.metadata["bits"] = fmt::format("{}", m.config().quant.bits);
  return ckpt;
}

std::unique_ptr<model::Transformer> load_model(const checkpoint::Checkpoint& ckpt, config::RunConfig* cfg_out) {
  config::RunConfig cfg = config::parse(ckpt.config_text);
  auto m = make_model(cfg);
  checkpoint::import_into(*m, ckpt);
  if (cfg_out) *cfg_out = cfg;
  return m;
}

}  // namespace qatf::pipeline
