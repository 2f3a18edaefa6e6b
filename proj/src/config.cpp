// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "qatf/errors.hpp"

namespace qatf::config {
namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("'{}': cannot parse '{}' as a number", key, v));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(fmt::format("'{}': expected true or false, got '{}'", key, v));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define QATF_SIZE(sec, name, expr)                                                                 \
  Field {                                                                                          \
    sec, name, [](const RunConfig& c) { return fmt::format("{}", c.expr); },                       \
        [](RunConfig& c, std::string_view v) { c.expr = parse_number<std::size_t>(name, v); }      \
  }
#define QATF_FLOAT(sec, name, expr)                                                                \
  Field {                                                                                          \
    sec, name, [](const RunConfig& c) { return fmt::format("{}", c.expr); },                       \
        [](RunConfig& c, std::string_view v) { c.expr = parse_number<decltype(c.expr)>(name, v); } \
  }
#define QATF_BOOL(sec, name, expr)                                                                 \
  Field {                                                                                          \
    sec, name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); },          \
        [](RunConfig& c, std::string_view v) { c.expr = parse_bool(name, v); }                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run", "seed", [](const RunConfig& c) { return fmt::format("{}", c.seed); },
            [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      Field{"run", "data_dir", [](const RunConfig& c) { return c.data_dir; },
            [](RunConfig& c, std::string_view v) { c.data_dir = std::string(v); }},
      Field{"run", "out_dir", [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); }},

      QATF_SIZE("model", "layers", model.layers),
      QATF_SIZE("model", "d_model", model.d_model),
      QATF_SIZE("model", "heads", model.heads),
      QATF_SIZE("model", "d_ff", model.d_ff),
      QATF_SIZE("model", "vocab", model.vocab),
      QATF_SIZE("model", "max_len", model.max_len),
      QATF_FLOAT("model", "dropout", model.dropout),
      Field{"quant", "bits", [](const RunConfig& c) { return fmt::format("{}", c.model.quant.bits); },
            [](RunConfig& c, std::string_view v) { c.model.quant.bits = parse_number<int>("bits", v); }},
      QATF_BOOL("quant", "power_of_two", model.quant.power_of_two_scalars),

      Field{"data", "task", [](const RunConfig& c) { return std::string(data::task_kind_name(c.data.kind)); },
            [](RunConfig& c, std::string_view v) { c.data.kind = data::parse_task_kind(v); }},
      QATF_SIZE("data", "min_len", data.min_len),
      QATF_SIZE("data", "max_len", data.max_len),
      QATF_SIZE("data", "size", data.size),
      QATF_FLOAT("data", "train_ratio", data.train_ratio),
      QATF_FLOAT("data", "valid_ratio", data.valid_ratio),
      QATF_FLOAT("data", "test_ratio", data.test_ratio),

      QATF_SIZE("train", "batch_size", train.batch_size),
      QATF_SIZE("train", "steps", train.steps),
      QATF_FLOAT("train", "base_lr", train.adam.base_lr),
      QATF_SIZE("train", "warmup", train.adam.warmup),
      QATF_FLOAT("train", "beta1", train.adam.beta1),
      QATF_FLOAT("train", "beta2", train.adam.beta2),
      QATF_FLOAT("train", "eps", train.adam.eps),
      QATF_SIZE("train", "eval_every", train.eval_every),
      QATF_SIZE("train", "valid_sentences", train.valid_sentences),
      QATF_FLOAT("train", "target_accuracy", train.target_accuracy),

      QATF_SIZE("qat", "phase1_steps", qat.steps[0]),
      QATF_SIZE("qat", "phase2_steps", qat.steps[1]),
      QATF_SIZE("qat", "phase3_steps", qat.steps[2]),
      QATF_SIZE("qat", "phase4_steps", qat.steps[3]),
      QATF_SIZE("qat", "phase5_steps", qat.steps[4]),
      QATF_SIZE("qat", "phase6_steps", qat.steps[5]),
      QATF_BOOL("qat", "phase4", qat.enabled[3]),
      QATF_BOOL("qat", "phase5", qat.enabled[4]),
      QATF_BOOL("qat", "phase6", qat.enabled[5]),
      QATF_BOOL("qat", "joint", qat.joint),
      QATF_SIZE("qat", "select_every", qat.select_every),

      QATF_SIZE("eval", "beam", eval.beam),
      QATF_FLOAT("eval", "alpha", eval.alpha),
      QATF_SIZE("eval", "max_decode_len", eval.max_decode_len),
      QATF_SIZE("eval", "sentences", eval.sentences),
      QATF_SIZE("eval", "select_sentences", eval.select_sentences),
  };
  return table;
}

#undef QATF_SIZE
#undef QATF_FLOAT
#undef QATF_BOOL

}  // namespace

schedule::PhasePlan RunConfig::default_plan() {
  schedule::PhasePlan p;
  p.steps = {400, 200, 400, 400, 300, 300};
  p.select_every = 150;
  return p;
}

void RunConfig::validate() const {
  model.validate();
  task().validate();
  qat.validate();
  beam().validate();
  if (data.size == 0) throw ConfigError("empty corpus: data.size must be positive");
  if (data.train_ratio < 0 || data.valid_ratio < 0 || data.test_ratio < 0 ||
      std::fabs(data.train_ratio + data.valid_ratio + data.test_ratio - 1.0) > 1e-9) {
    throw ConfigError("data split ratios must be nonnegative and sum to 1");
  }
  if (data.max_len + 1 > model.max_len) {
    throw ConfigError(fmt::format("sentences of {} tokens plus eos exceed model max_len {}", data.max_len, model.max_len));
  }
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.adam.warmup == 0) throw ConfigError("train.warmup must be at least 1");
  if (!(train.adam.base_lr > 0.0f)) throw ConfigError("train.base_lr must be positive");
  if (!(train.adam.beta1 >= 0.0f && train.adam.beta1 < 1.0f && train.adam.beta2 >= 0.0f && train.adam.beta2 < 1.0f)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (train.target_accuracy < 0.0 || train.target_accuracy > 1.0) throw ConfigError("train.target_accuracy outside [0, 1]");
  if (train.eval_every == 0) throw ConfigError("train.eval_every must be positive");
}

data::SyntheticTask RunConfig::task() const {
  return data::SyntheticTask{data.kind, model.vocab, data.min_len, data.max_len, seed};
}

decode::BeamParams RunConfig::beam() const { return decode::BeamParams{eval.beam, eval.alpha, eval.max_decode_len}; }

RunConfig parse(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("line {}: malformed section header", lineno));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      bool known = false;
      for (const Field& f : fields()) known = known || f.section == section;
      if (!known) throw ConfigError(fmt::format("line {}: unknown section [{}]", lineno, section));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(fmt::format("line {}: key '{}' outside any section", lineno, key));
    if (section == "model" && key == "preset") {
      const QuantConfig quant = cfg.model.quant;
      if (value == "desk") {
        cfg.model = model::TransformerConfig::desk();
      } else if (value == "base") {
        cfg.model = model::TransformerConfig::base();
      } else if (value == "big") {
        cfg.model = model::TransformerConfig::big();
      } else {
        throw ConfigError(fmt::format("line {}: unknown preset '{}'", lineno, value));
      }
      cfg.model.quant = quant;
      continue;
    }
    const Field* match = nullptr;
    for (const Field& f : fields()) {
      if (f.section == section && f.key == key) match = &f;
    }
    if (!match) throw ConfigError(fmt::format("line {}: unknown key '{}' in [{}]", lineno, key, section));
    try {
      match->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += fmt::format("[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", f.key, f.get(cfg));
  }
  return out;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace qatf::config
