// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "qatf/errors.hpp"
#include "qatf/ops.hpp"

namespace qatf::model {

Mode parse_mode(std::string_view text) {
  if (text == "fp32") return Mode::fp32;
  if (text == "fake") return Mode::fake_quant;
  if (text == "int") return Mode::int_infer;
  throw ConfigError(fmt::format("unknown mode '{}' (expected fp32, fake or int)", text));
}

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::fp32:
      return "fp32";
    case Mode::fake_quant:
      return "fake";
    case Mode::int_infer:
      return "int";
  }
  return "?";
}

void TransformerConfig::validate() const {
  if (layers == 0) throw ConfigError("model needs at least one encoder and decoder layer");
  if (d_model == 0 || heads == 0 || d_ff == 0) throw ConfigError("model dimensions must be positive");
  if (d_model % heads != 0) throw ConfigError(fmt::format("d_model {} is not divisible by {} heads", d_model, heads));
  if (vocab < 3) throw ConfigError(fmt::format("vocabulary of {} leaves no room for content tokens", vocab));
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError(fmt::format("dropout {} outside [0, 1)", dropout));
  quant.validate();
}

TransformerConfig TransformerConfig::desk() { return TransformerConfig{}; }

TransformerConfig TransformerConfig::base() {
  TransformerConfig c;
  c.layers = 6;
  c.d_model = 512;
  c.heads = 8;
  c.d_ff = 2048;
  c.vocab = 33288;
  c.max_len = 256;
  return c;
}

TransformerConfig TransformerConfig::big() {
  TransformerConfig c = base();
  c.d_model = 1024;
  c.heads = 16;
  c.d_ff = 4096;
  c.dropout = 0.3f;
  return c;
}

std::size_t expected_threshold_count(std::size_t layers) {
  return layers * (kEncoderDense + 2 * kEncoderMatmul + kDecoderDense + 2 * kDecoderMatmul) + 1;
}

std::size_t expected_dense_sites(std::size_t layers) { return layers * (kEncoderDense + kDecoderDense) + 1; }

std::size_t expected_matmul_sites(std::size_t layers) { return layers * (kEncoderMatmul + kDecoderMatmul); }

ThresholdScalar& ScalarRegistry::add(std::string site_name, bool is_signed) {
  if (index_.count(site_name)) throw ConfigError(fmt::format("duplicate threshold site '{}'", site_name));
  index_.emplace(site_name, scalars_.size());
  ThresholdScalar& th = scalars_.emplace_back();
  th.site_name = std::move(site_name);
  th.is_signed = is_signed;
  return th;
}

ThresholdScalar* ScalarRegistry::find(std::string_view site_name) {
  auto it = index_.find(site_name);
  return it == index_.end() ? nullptr : &scalars_[it->second];
}

const ThresholdScalar* ScalarRegistry::find(std::string_view site_name) const {
  auto it = index_.find(site_name);
  return it == index_.end() ? nullptr : &scalars_[it->second];
}

QuantState QuantState::for_mode(Mode mode) {
  switch (mode) {
    case Mode::fp32:
      return {};
    case Mode::fake_quant:
      return {true, true, false};
    case Mode::int_infer:
      return {true, true, true};
  }
  return {};
}

std::mt19937_64 named_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

Transformer::Transformer(TransformerConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng = named_stream(seed, "init");
  const std::size_t d = config_.d_model;

  Tensor table({config_.vocab, d});
  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(d)));
  for (float& v : table.data()) v = normal(rng);
  embedding_ = &add_parameter("embed", std::move(table));

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = fmt::format("enc.{}", l);
    EncoderLayer layer;
    layer.ln1 = add_norm(p + ".ln1");
    layer.self = add_attention(p + ".self", rng);
    layer.ln2 = add_norm(p + ".ln2");
    layer.fc1 = add_dense(p + ".fc1", d, config_.d_ff, rng);
    layer.fc2 = add_dense(p + ".fc2", config_.d_ff, d, rng);
    encoder_.push_back(layer);
  }
  encoder_norm_ = add_norm("enc.ln");
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = fmt::format("dec.{}", l);
    DecoderLayer layer;
    layer.ln1 = add_norm(p + ".ln1");
    layer.self = add_attention(p + ".self", rng);
    layer.ln2 = add_norm(p + ".ln2");
    layer.cross = add_attention(p + ".cross", rng);
    layer.ln3 = add_norm(p + ".ln3");
    layer.fc1 = add_dense(p + ".fc1", d, config_.d_ff, rng);
    layer.fc2 = add_dense(p + ".fc2", config_.d_ff, d, rng);
    decoder_.push_back(layer);
  }
  decoder_norm_ = add_norm("dec.ln");

  proj_ = dense_.size();
  dense_.push_back(DenseSite{"proj", embedding_, nullptr, &registry_.add("proj.x", true), true});

  if (registry_.size() != expected_threshold_count(config_.layers) ||
      dense_.size() != expected_dense_sites(config_.layers) || matmul_.size() != expected_matmul_sites(config_.layers)) {
    throw ConfigError(fmt::format("site inventory mismatch: {} thresholds, {} dense, {} matmul", registry_.size(),
                                  dense_.size(), matmul_.size()));
  }

  positions_ = Tensor({config_.max_len, d});
  for (std::size_t pos = 0; pos < config_.max_len; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      positions_.at(pos, 2 * i) = static_cast<float>(std::sin(static_cast<double>(pos) * freq));
      positions_.at(pos, 2 * i + 1) = static_cast<float>(std::cos(static_cast<double>(pos) * freq));
    }
  }
}

Parameter& Transformer::add_parameter(std::string name, Tensor value) {
  return params_.emplace_back(std::move(name), std::move(value));
}

Transformer::Norm Transformer::add_norm(const std::string& prefix) {
  Parameter& gain = add_parameter(prefix + ".gain", Tensor({config_.d_model}, 1.0f));
  Parameter& bias = add_parameter(prefix + ".bias", Tensor({config_.d_model}, 0.0f));
  return {&gain, &bias};
}

std::size_t Transformer::add_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(in + out));
  std::uniform_real_distribution<float> uniform(-limit, limit);
  Tensor w({in, out});
  for (float& v : w.data()) v = uniform(rng);
  Parameter& weight = add_parameter(name + ".weight", std::move(w));
  Parameter& bias = add_parameter(name + ".bias", Tensor({out}, 0.0f));
  dense_.push_back(DenseSite{name, &weight, &bias, &registry_.add(name + ".x", true), false});
  return dense_.size() - 1;
}

std::size_t Transformer::add_matmul(const std::string& name, const char* left, const char* right, bool left_unsigned) {
  ThresholdScalar& l = registry_.add(fmt::format("{}.{}", name, left), !left_unsigned);
  ThresholdScalar& r = registry_.add(fmt::format("{}.{}", name, right), true);
  matmul_.push_back(MatmulSite{name, &l, &r, left_unsigned});
  return matmul_.size() - 1;
}

Transformer::Attention Transformer::add_attention(const std::string& prefix, std::mt19937_64& rng) {
  const std::size_t d = config_.d_model;
  Attention a{};
  a.q = add_dense(prefix + ".q", d, d, rng);
  a.k = add_dense(prefix + ".k", d, d, rng);
  a.v = add_dense(prefix + ".v", d, d, rng);
  a.scores = add_matmul(prefix + ".scores", "q", "k", false);
  a.context = add_matmul(prefix + ".context", "u", "v", true);
  a.o = add_dense(prefix + ".o", d, d, rng);
  return a;
}

std::vector<Parameter*> Transformer::parameters() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Transformer::parameters() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

Parameter* Transformer::find_parameter(std::string_view name) {
  for (Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void Transformer::set_params_frozen(bool frozen) {
  for (Parameter& p : params_) p.frozen = frozen;
}

void Transformer::set_thresholds_frozen(bool frozen) {
  for (ThresholdScalar& th : registry_) th.frozen = frozen;
}

void Transformer::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
  for (ThresholdScalar& th : registry_) th.grad = 0.0f;
}

void Transformer::prepare_integer_inference() {
  const QuantConfig cfg = config_.quant.with_signed(true);
  const bool pow2 = cfg.power_of_two_scalars;
  std::vector<int_infer::IntDenseLayer> dense;
  dense.reserve(dense_.size());
  for (const DenseSite& site : dense_) {
    dense.push_back(int_infer::IntDenseLayer::build(site.weight->value, site.bias ? &site.bias->value : nullptr,
                                                    site.input->scale(pow2), cfg, site.transposed,
                                                    site.weight->pinned_scale,
                                                    site.bias ? site.bias->pinned_scale : 0.0f));
  }
  // Indexed by the scores site; the paired context site follows it.
  std::vector<int_infer::IntAttentionSite> attention(matmul_.size());
  for (std::size_t i = 0; i + 1 < matmul_.size(); i += 2) {
    int_infer::IntAttentionSite s;
    s.s_q = matmul_[i].left->scale(pow2);
    s.s_k = matmul_[i].right->scale(pow2);
    s.s_u = matmul_[i + 1].left->scale(pow2);
    s.s_v = matmul_[i + 1].right->scale(pow2);
    s.d_k = config_.head_dim();
    s.validate();
    attention[i] = s;
  }
  int_dense_ = std::move(dense);
  int_matmul_ = std::move(attention);
  integer_ready_ = true;
}

void Transformer::require_tokens(const TokenMatrix& t, const char* what) const {
  if (t.rows == 0 || t.cols == 0 || t.ids.size() != t.rows * t.cols) {
    throw DimensionError(fmt::format("{} token matrix is empty or inconsistent", what));
  }
  if (t.cols > config_.max_len) {
    throw PreconditionError(fmt::format("{} length {} exceeds max_len {}", what, t.cols, config_.max_len));
  }
}

Var Transformer::weight(Graph& g, Parameter& p, const ForwardOptions& opts) {
  Var w = g.param(p);
  if (!opts.quant.weights && !opts.quant.activations) return w;
  return quant_ops::fake_quant_range_preserving(w, config_.quant.with_signed(true), p.pinned_scale).var;
}

Var Transformer::embed(Graph& g, const TokenMatrix& tokens, const ForwardOptions& opts) {
  const std::size_t d = config_.d_model;
  Var table = weight(g, *embedding_, opts);
  Var x = ops::scale(ops::embedding(table, tokens.ids), std::sqrt(static_cast<float>(d)));
  Tensor pos({tokens.rows * tokens.cols, d});
  for (std::size_t r = 0; r < tokens.rows; ++r) {
    std::copy_n(positions_.ptr(), tokens.cols * d, pos.ptr() + r * tokens.cols * d);
  }
  return residual_dropout(ops::add(x, g.constant(std::move(pos))), opts);
}

Var Transformer::residual_dropout(Var x, const ForwardOptions& opts) {
  const bool quantized = opts.quant.weights || opts.quant.activations || opts.quant.integer;
  if (!opts.train || quantized || config_.dropout == 0.0f) return x;
  if (!opts.rng) throw PreconditionError("training forward needs an rng for dropout");
  return ops::dropout(x, config_.dropout, *opts.rng);
}

Var Transformer::norm(Graph& g, Var x, const Norm& n) { return ops::layer_norm(x, g.param(*n.gain), g.param(*n.bias)); }

Var Transformer::dense(Graph& g, Var x, std::size_t index, const ForwardOptions& opts) {
  const DenseSite& site = dense_[index];
  const QuantConfig cfg = config_.quant.with_signed(true);
  if (opts.observer) opts.observer(*site.input, x.value());
  if (opts.quant.integer) {
    if (!integer_ready_) throw SequencingError("integer forward before prepare_integer_inference()");
    return g.constant(int_infer::dense_forward_int(x.value(), int_dense_[index], cfg));
  }
  Var y;
  if (opts.quant.activations) {
    Var w = g.param(*site.weight);
    const ops::GridVar gx = quant_ops::fake_quant(x, *site.input, cfg);
    const ops::GridVar gw = quant_ops::fake_quant_range_preserving(w, cfg, site.weight->pinned_scale);
    y = ops::grid_matmul(gx, gw, site.transposed);
  } else {
    Var w = weight(g, *site.weight, opts);
    y = site.transposed ? ops::matmul_nt(x, w) : ops::matmul(x, w);
  }
  if (site.bias) y = ops::add_bias(y, weight(g, *site.bias, opts));
  return y;
}

Var Transformer::attend(Graph& g, const Attention& a, Var x_q, Var x_kv, const ops::AttentionDims& dims,
                        const Tensor* mask, const ForwardOptions& opts) {
  Var q = dense(g, x_q, a.q, opts);
  Var k = dense(g, x_kv, a.k, opts);
  Var v = dense(g, x_kv, a.v, opts);
  const MatmulSite& scores = matmul_[a.scores];
  const MatmulSite& context = matmul_[a.context];
  if (opts.observer) {
    opts.observer(*scores.left, q.value());
    opts.observer(*scores.right, k.value());
    opts.observer(*context.right, v.value());
  }
  Var ctx;
  if (opts.quant.integer) {
    ctx = g.constant(int_infer::attention_forward_int(q.value(), k.value(), v.value(), int_matmul_[a.scores],
                                                      config_.quant, dims, mask));
  } else {
    const float logit_scale = ops::attention_logit_scale(dims.head_dim());
    if (opts.quant.activations) {
      const QuantConfig cfg = config_.quant;
      Var u = ops::softmax(ops::attention_scores(quant_ops::fake_quant(q, *scores.left, cfg.with_signed(true)),
                                                 quant_ops::fake_quant(k, *scores.right, cfg.with_signed(true)), dims,
                                                 logit_scale, mask),
                           1);
      if (opts.observer) opts.observer(*context.left, u.value());
      ctx = ops::attention_context(quant_ops::fake_quant(u, *context.left, cfg.with_signed(false)),
                                   quant_ops::fake_quant(v, *context.right, cfg.with_signed(true)), dims);
    } else {
      Var u = ops::softmax(ops::attention_scores(q, k, dims, logit_scale, mask), 1);
      if (opts.observer) opts.observer(*context.left, u.value());
      ctx = ops::attention_context(u, v, dims);
    }
  }
  return dense(g, ctx, a.o, opts);
}

Encoded Transformer::encode(Graph& g, const TokenMatrix& src, const ForwardOptions& opts) {
  require_tokens(src, "source");
  const std::size_t B = src.rows, S = src.cols;
  Encoded enc;
  enc.batch = B;
  enc.src_len = S;
  enc.src_pad.resize(B * S);
  for (std::size_t i = 0; i < B * S; ++i) enc.src_pad[i] = src.ids[i] == kPadId ? 1 : 0;

  Tensor mask({B, S, S}, 0.0f);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        if (enc.src_pad[b * S + j]) mask[(b * S + i) * S + j] = ops::kMaskedLogit;
      }
    }
  }
  const ops::AttentionDims dims{B, config_.heads, S, S, config_.d_model};
  Var x = embed(g, src, opts);
  for (const EncoderLayer& layer : encoder_) {
    Var h = norm(g, x, layer.ln1);
    x = ops::add(x, residual_dropout(attend(g, layer.self, h, h, dims, &mask, opts), opts));
    h = norm(g, x, layer.ln2);
    Var f = dense(g, ops::relu(dense(g, h, layer.fc1, opts)), layer.fc2, opts);
    x = ops::add(x, residual_dropout(f, opts));
  }
  enc.memory = norm(g, x, encoder_norm_);
  return enc;
}

Var Transformer::decode(Graph& g, const Encoded& enc, const TokenMatrix& tgt_in, const ForwardOptions& opts) {
  require_tokens(tgt_in, "target");
  if (tgt_in.rows != enc.batch) {
    throw DimensionError(fmt::format("target batch {} does not match source batch {}", tgt_in.rows, enc.batch));
  }
  const std::size_t B = enc.batch, S = enc.src_len, T = tgt_in.cols;
  Tensor causal({B, T, T}, 0.0f);
  Tensor cross({B, T, S}, 0.0f);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = i + 1; j < T; ++j) causal[(b * T + i) * T + j] = ops::kMaskedLogit;
      for (std::size_t j = 0; j < S; ++j) {
        if (enc.src_pad[b * S + j]) cross[(b * T + i) * S + j] = ops::kMaskedLogit;
      }
    }
  }
  const ops::AttentionDims self_dims{B, config_.heads, T, T, config_.d_model};
  const ops::AttentionDims cross_dims{B, config_.heads, T, S, config_.d_model};
  Var y = embed(g, tgt_in, opts);
  for (const DecoderLayer& layer : decoder_) {
    Var h = norm(g, y, layer.ln1);
    y = ops::add(y, residual_dropout(attend(g, layer.self, h, h, self_dims, &causal, opts), opts));
    h = norm(g, y, layer.ln2);
    y = ops::add(y, residual_dropout(attend(g, layer.cross, h, enc.memory, cross_dims, &cross, opts), opts));
    h = norm(g, y, layer.ln3);
    Var f = dense(g, ops::relu(dense(g, h, layer.fc1, opts)), layer.fc2, opts);
    y = ops::add(y, residual_dropout(f, opts));
  }
  return dense(g, norm(g, y, decoder_norm_), proj_, opts);
}

Var Transformer::forward(Graph& g, const TokenMatrix& src, const TokenMatrix& tgt_in, const ForwardOptions& opts) {
  return decode(g, encode(g, src, opts), tgt_in, opts);
}

Accuracy token_accuracy(const Tensor& logits, const TokenMatrix& targets) {
  const std::size_t vocab = logits.cols();
  if (logits.rows() != targets.ids.size()) {
    throw DimensionError(fmt::format("logits {} do not match {} targets", shape_str(logits.shape()), targets.ids.size()));
  }
  Accuracy acc;
  for (std::size_t r = 0; r < targets.ids.size(); ++r) {
    if (targets.ids[r] == kPadId) continue;
    const float* row = logits.ptr() + r * vocab;
    std::size_t best = 0;
    for (std::size_t c = 1; c < vocab; ++c) {
      if (row[c] > row[best]) best = c;
    }
    ++acc.total;
    if (static_cast<std::int32_t>(best) == targets.ids[r]) ++acc.correct;
  }
  return acc;
}

}  // namespace qatf::model
