// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// qatf: generate-data, train-fp32, qat, eval, inspect.
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "qatf/checkpoint.hpp"
#include "qatf/config.hpp"
#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"
#include "qatf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qatf;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

config::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError(fmt::format("cannot write metrics log '{}'", path.string()));
  }
  void operator()(const schedule::StepRecord& r) { out_ << schedule::format_record(r) << '\n'; }

 private:
  std::ofstream out_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

std::size_t metadata_step(const checkpoint::Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("step");
  return it == ckpt.metadata.end() ? 0 : std::stoul(it->second);
}

std::string metadata_kind(const checkpoint::Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("kind");
  return it == ckpt.metadata.end() ? "" : it->second;
}

int cmd_generate(const std::string& config_path, std::optional<std::uint64_t> seed) {
  const config::RunConfig cfg = load_config(config_path, seed);
  const data::Splits s = pipeline::generate_corpus(cfg);
  pipeline::write_corpus(cfg.data_dir, s);
  fmt::print("wrote {} train, {} valid, {} test pairs to {}\n", s.train.size(), s.valid.size(), s.test.size(),
             cfg.data_dir);
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::string out, std::string log,
              const std::string& resume) {
  config::RunConfig cfg = load_config(config_path, seed);
  const data::Splits data = pipeline::read_corpus(cfg.data_dir);
  std::unique_ptr<model::Transformer> m;
  std::size_t start = 0;
  if (!resume.empty()) {
    const checkpoint::Checkpoint ckpt = checkpoint::load(resume);
    if (metadata_kind(ckpt) != "fp32") throw ConfigError("--resume needs an fp32 checkpoint");
    m = pipeline::make_model(cfg);
    checkpoint::import_into(*m, ckpt);
    start = metadata_step(ckpt);
  } else {
    m = pipeline::make_model(cfg);
  }
  ensure_dir(cfg.out_dir);
  if (out.empty()) out = (fs::path(cfg.out_dir) / "fp32.qatf").string();
  if (log.empty()) log = (fs::path(cfg.out_dir) / "fp32.metrics.tsv").string();
  MetricsLog metrics(log);
  const pipeline::TrainReport r = pipeline::train_fp32(*m, cfg, data, start, std::ref(metrics));
  checkpoint::save(out, pipeline::make_checkpoint(*m, cfg, false, r.last_step));
  fmt::print("steps {}..{} in {:.1f}s, best validation token accuracy {:.4f} at step {}\n", r.first_step + 1,
             r.last_step, r.seconds, r.best_accuracy, r.best_step);
  fmt::print("checkpoint {} (crc32 {:08x})\n", out, checkpoint::file_checksum(out));
  return 0;
}

int cmd_qat(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& fp32_path,
            std::optional<int> bits, bool joint, std::string out, std::string log) {
  config::RunConfig cfg = load_config(config_path, seed);
  if (bits) cfg.model.quant.bits = *bits;
  if (joint) cfg.qat.joint = true;
  cfg.validate();
  if (fp32_path.empty()) throw ConfigError("qat needs --fp32 CHECKPOINT");
  if (!fs::exists(fp32_path)) throw DataError(fmt::format("fp32 checkpoint '{}' does not exist", fp32_path));
  const checkpoint::Checkpoint base = checkpoint::load(fp32_path);
  if (metadata_kind(base) != "fp32") throw ConfigError(fmt::format("'{}' is not an fp32 checkpoint", fp32_path));
  const data::Splits data = pipeline::read_corpus(cfg.data_dir);
  auto m = pipeline::make_model(cfg);
  checkpoint::import_into(*m, base);
  if (m->count_scalars() != model::expected_threshold_count(cfg.model.layers)) {
    throw std::logic_error("threshold registry does not match the closed-form count");
  }
  ensure_dir(cfg.out_dir);
  const std::string tag = fmt::format("int{}{}", cfg.model.quant.bits, cfg.qat.joint ? "-joint" : "");
  if (out.empty()) out = (fs::path(cfg.out_dir) / (tag + ".qatf")).string();
  if (log.empty()) log = (fs::path(cfg.out_dir) / (tag + ".metrics.tsv")).string();
  MetricsLog metrics(log);
  const pipeline::QatReport r = pipeline::run_qat(*m, cfg, data, metadata_step(base), std::ref(metrics));
  const checkpoint::Checkpoint ckpt = pipeline::make_checkpoint(*m, cfg, true, r.last_step);
  if (ckpt.count(checkpoint::EntryKind::threshold) != m->count_scalars()) {
    throw std::logic_error("exported threshold entries do not match the registry");
  }
  checkpoint::save(out, ckpt);
  for (const pipeline::PhaseReport& p : r.phases) {
    double mean = 0.0;
    for (const auto& s : p.log) mean += s.loss;
    if (!p.log.empty()) mean /= static_cast<double>(p.log.size());
    fmt::print("phase {}: {} steps, mean loss {:.4f}, end validation loss {:.5f}, {:.1f}s\n", p.phase, p.log.size(),
               mean, p.end_loss, p.seconds);
  }
  if (r.selected) fmt::print("selected step {} (phase {}), validation BLEU {:.2f}\n", r.selected->step, r.selected->phase, r.selected->score);
  fmt::print("checkpoint {} ({} threshold scalars, {} integer tensors, crc32 {:08x})\n", out,
             ckpt.count(checkpoint::EntryKind::threshold), ckpt.count(checkpoint::EntryKind::int_tensor),
             checkpoint::file_checksum(out));
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& mode_text, std::optional<int> bits,
             std::optional<std::size_t> beam, std::optional<float> alpha, const std::string& split,
             const std::string& data_dir, std::size_t limit, const std::string& baseline_path) {
  const model::Mode mode = model::parse_mode(mode_text);
  const checkpoint::Checkpoint ckpt = checkpoint::load(ckpt_path);
  config::RunConfig cfg;
  auto m = pipeline::load_model(ckpt, &cfg);
  const bool integer_ckpt = metadata_kind(ckpt) == "int";
  if (integer_ckpt != (mode != model::Mode::fp32)) {
    throw ConfigError(fmt::format("mode '{}' does not match {} checkpoint '{}'", mode_text,
                                  integer_ckpt ? "an integer" : "an fp32", ckpt_path));
  }
  if (bits && *bits != m->config().quant.bits) {
    throw ConfigError(fmt::format("--bits {} but the checkpoint holds {}-bit tensors", *bits, m->config().quant.bits));
  }
  decode::BeamParams bp = cfg.beam();
  if (beam) bp.beam = *beam;
  if (alpha) bp.alpha = *alpha;
  const data::Splits data = pipeline::read_corpus(data_dir.empty() ? cfg.data_dir : data_dir);
  const std::vector<data::Pair>* pairs = nullptr;
  if (split == "test") {
    pairs = &data.test;
  } else if (split == "valid") {
    pairs = &data.valid;
  } else if (split == "train") {
    pairs = &data.train;
  } else {
    throw ConfigError(fmt::format("unknown split '{}'", split));
  }
  const pipeline::EvalReport r = pipeline::evaluate(*m, *pairs, mode, bp, limit);
  fmt::print("mode {}  bits {}  beam {}  alpha {}  sentences {}\n", mode_text, m->config().quant.bits, bp.beam,
             bp.alpha, r.sentences);
  fmt::print("BLEU cased {:.2f}  uncased {:.2f}  token accuracy {:.4f}  truncated {}\n", r.bleu_cased, r.bleu_uncased,
             r.token_accuracy, r.truncated);
  if (!baseline_path.empty()) {
    auto base = pipeline::load_model(checkpoint::load(baseline_path));
    const pipeline::EvalReport b = pipeline::evaluate(*base, *pairs, model::Mode::fp32, bp, limit);
    const auto rel = [](double x, double y) { return y > 0.0 ? 100.0 * x / y : 0.0; };
    fmt::print("baseline BLEU cased {:.2f}  uncased {:.2f}\n", b.bleu_cased, b.bleu_uncased);
    fmt::print("relative BLEU cased {:.2f}%  uncased {:.2f}%\n", rel(r.bleu_cased, b.bleu_cased),
               rel(r.bleu_uncased, b.bleu_uncased));
  }
  return 0;
}

void print_inventory(const model::Transformer& m) {
  const auto& c = m.config();
  fmt::print("model N={} d_model={} heads={} d_ff={} vocab={} bits={}\n", c.layers, c.d_model, c.heads, c.d_ff, c.vocab,
             c.quant.bits);
  fmt::print("dense sites {} (expected {}), matmul sites {} (expected {}), matrix multiplications {}\n",
             m.dense_sites().size(), model::expected_dense_sites(c.layers), m.matmul_sites().size(),
             model::expected_matmul_sites(c.layers), m.dense_sites().size() + m.matmul_sites().size());
  const bool ok = m.count_scalars() == model::expected_threshold_count(c.layers);
  fmt::print("threshold scalars {} (expected {}): {}\n", m.count_scalars(), model::expected_threshold_count(c.layers),
             ok ? "ok" : "MISMATCH");
}

int cmd_inspect(const std::string& path, const std::string& preset) {
  if (!preset.empty()) {
    model::TransformerConfig c = preset == "base"  ? model::TransformerConfig::base()
                                 : preset == "big" ? model::TransformerConfig::big()
                                 : preset == "desk"
                                     ? model::TransformerConfig::desk()
                                     : throw ConfigError(fmt::format("unknown preset '{}'", preset));
    print_inventory(model::Transformer(c, 0));
    return 0;
  }
  if (path.empty()) throw ConfigError("inspect needs a checkpoint path or --preset");
  const checkpoint::Checkpoint ckpt = checkpoint::load(path);
  fmt::print("checkpoint {}  format v{}  crc32 {:08x}\n", path, checkpoint::kFormatVersion, checkpoint::file_checksum(path));
  for (const auto& [k, v] : ckpt.metadata) fmt::print("  {} = {}\n", k, v);
  for (const checkpoint::Entry& e : ckpt.entries) {
    switch (e.kind) {
      case checkpoint::EntryKind::fp32:
        fmt::print("  fp32       {:<28} {}\n", e.name, shape_str(e.tensor.shape()));
        break;
      case checkpoint::EntryKind::int_tensor:
        fmt::print("  int{:<2}      {:<28} {:<12} s={:.6g}\n", e.ints.bits, e.name, shape_str(e.ints.shape), e.ints.scale);
        break;
      case checkpoint::EntryKind::threshold:
        fmt::print("  threshold  {:<28} z={:.6f} s={:.6g} {}\n", e.name, e.z, std::exp2(e.z),
                   e.is_signed ? "signed" : "unsigned");
        break;
    }
  }
  const config::RunConfig cfg = config::parse(ckpt.config_text);
  print_inventory(model::Transformer(cfg.model, cfg.seed));
  const std::size_t stored = ckpt.count(checkpoint::EntryKind::threshold);
  fmt::print("threshold entries {} (expected {}): {}\n", stored, model::expected_threshold_count(cfg.model.layers),
             stored == model::expected_threshold_count(cfg.model.layers) ? "ok" : "MISMATCH");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training toolkit for Transformer translation models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "qatf 0.1.0");

  std::string config_path;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("generate-data", "Write deterministic train/valid/test corpora");
  gen->add_option("--config", config_path, "Run configuration file")->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "Override the run seed");

  std::string out, log, resume, fp32_path;
  auto* train = app.add_subcommand("train-fp32", "Train the FP32 baseline");
  train->add_option("--config", config_path, "Run configuration file")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override the run seed");
  train->add_option("--out", out, "Checkpoint path (default <out_dir>/fp32.qatf)");
  train->add_option("--log", log, "Metrics log path");
  train->add_option("--resume", resume, "Continue from an fp32 checkpoint");

  std::optional<int> bits;
  bool joint = false;
  auto* qat = app.add_subcommand("qat", "Run the six-phase quantization fine-tuning");
  qat->add_option("--config", config_path, "Run configuration file")->check(CLI::ExistingFile);
  qat->add_option("--seed", seed, "Override the run seed");
  qat->add_option("--fp32", fp32_path, "FP32 checkpoint to start from")->required();
  qat->add_option("--bits", bits, "Bit-width")->check(CLI::IsMember({6, 8, 16}));
  qat->add_flag("--joint", joint, "Train thresholds and parameters together in phases 3-4 (does not converge)");
  qat->add_option("--out", out, "Integer checkpoint path");
  qat->add_option("--log", log, "Metrics log path");

  std::string ckpt_path, mode = "fp32", split = "test", data_dir, baseline;
  std::optional<std::size_t> beam;
  std::optional<float> alpha;
  std::size_t limit = 0;
  auto* eval = app.add_subcommand("eval", "Decode a split and report BLEU and token accuracy");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", mode, "fp32, fake or int")->check(CLI::IsMember({"fp32", "fake", "int"}));
  eval->add_option("--bits", bits, "Expected bit-width")->check(CLI::IsMember({6, 8, 16}));
  eval->add_option("--beam", beam, "Beam size")->check(CLI::PositiveNumber);
  eval->add_option("--alpha", alpha, "Length penalty exponent")->check(CLI::NonNegativeNumber);
  eval->add_option("--split", split, "test, valid or train");
  eval->add_option("--data", data_dir, "Corpus directory (default: the checkpoint's data_dir)");
  eval->add_option("--limit", limit, "Evaluate only the first N sentences");
  eval->add_option("--baseline", baseline, "FP32 checkpoint for relative BLEU")->check(CLI::ExistingFile);

  std::string inspect_path, preset;
  auto* inspect = app.add_subcommand("inspect", "List checkpoint entries and the site inventory");
  inspect->add_option("checkpoint", inspect_path, "Checkpoint file");
  inspect->add_option("--preset", preset, "Show the inventory of a preset instead (desk, base, big)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(config_path, seed);
    if (*train) return cmd_train(config_path, seed, out, log, resume);
    if (*qat) return cmd_qat(config_path, seed, fp32_path, bits, joint, out, log);
    if (*eval) return cmd_eval(ckpt_path, mode, bits, beam, alpha, split, data_dir, limit, baseline);
    if (*inspect) return cmd_inspect(inspect_path, preset);
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "error: numeric divergence: {}\n", e.what());
    return kExitDivergence;
  } catch (const NumericError& e) {
    fmt::print(stderr, "error: numeric divergence: {}\n", e.what());
    return kExitDivergence;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitData;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
