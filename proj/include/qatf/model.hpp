// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm encoder-decoder Transformer. Every matrix multiplication is a
// quantization site: dense sites multiply a non-parameter input by a weight,
// matmul sites multiply two non-parameter tensors (QK^T and UV).
//
// Per layer the encoder has 6 dense and 2 matmul sites, the decoder 10 dense
// and 4 matmul sites; the output projection shares the embedding table.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qatf/autograd.hpp"
#include "qatf/int_infer.hpp"
#include "qatf/quant.hpp"

namespace qatf::model {

enum class Mode { fp32, fake_quant, int_infer };

// Accepts "fp32", "fake" and "int".
Mode parse_mode(std::string_view text);
std::string_view mode_name(Mode mode);

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kEosId = 1;  // also the decoder start symbol

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab = 64;
  std::size_t max_len = 64;
  float dropout = 0.1f;
  QuantConfig quant;
  Mode mode = Mode::fp32;

  // Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }

  static TransformerConfig desk();
  static TransformerConfig base();
  static TransformerConfig big();

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

inline constexpr std::size_t kEncoderDense = 6;
inline constexpr std::size_t kEncoderMatmul = 2;
inline constexpr std::size_t kDecoderDense = 10;
inline constexpr std::size_t kDecoderMatmul = 4;

// N (D_enc + 2 M_enc + D_dec + 2 M_dec) + 1.
std::size_t expected_threshold_count(std::size_t layers);
std::size_t expected_dense_sites(std::size_t layers);
std::size_t expected_matmul_sites(std::size_t layers);

// Learned thresholds in registration order; references stay valid.
class ScalarRegistry {
 public:
  ThresholdScalar& add(std::string site_name, bool is_signed);
  std::size_t size() const { return scalars_.size(); }
  ThresholdScalar& at(std::size_t i) { return scalars_.at(i); }
  const ThresholdScalar& at(std::size_t i) const { return scalars_.at(i); }
  // nullptr when absent.
  ThresholdScalar* find(std::string_view site_name);
  const ThresholdScalar* find(std::string_view site_name) const;

  auto begin() { return scalars_.begin(); }
  auto end() { return scalars_.end(); }
  auto begin() const { return scalars_.begin(); }
  auto end() const { return scalars_.end(); }

 private:
  std::deque<ThresholdScalar> scalars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct DenseSite {
  std::string name;
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;  // absent for the tied output projection
  ThresholdScalar* input = nullptr;
  bool transposed = false;  // weight stored [out x in]
};

struct MatmulSite {
  std::string name;
  ThresholdScalar* left = nullptr;
  ThresholdScalar* right = nullptr;
  bool left_unsigned = false;  // the attention weights U
};

// Row-major [rows x cols] token ids.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

// Which parts of the network run quantized.
struct QuantState {
  bool weights = false;      // range-preserving fake quantization of weights and biases
  bool activations = false;  // learned-threshold fake quantization of inputs and matmul operands
  bool integer = false;      // integer kernels; needs prepare_integer_inference()

  static QuantState for_mode(Mode mode);
};

struct ForwardOptions {
  QuantState quant;
  bool train = false;  // enables dropout when nothing is quantized
  std::mt19937_64* rng = nullptr;
  // Sees every tensor bound to a learned threshold, before quantization.
  std::function<void(const ThresholdScalar&, const Tensor&)> observer;
};

struct Encoded {
  Var memory;  // [batch*src_len x d_model]
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::vector<std::uint8_t> src_pad;  // [batch*src_len], 1 at padding
};

class Transformer {
 public:
  Transformer(TransformerConfig config, std::uint64_t seed);
  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;

  const TransformerConfig& config() const { return config_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name);
  Parameter& embedding() { return *embedding_; }

  ScalarRegistry& thresholds() { return registry_; }
  const ScalarRegistry& thresholds() const { return registry_; }
  std::size_t count_scalars() const { return registry_.size(); }

  const std::vector<DenseSite>& dense_sites() const { return dense_; }
  const std::vector<MatmulSite>& matmul_sites() const { return matmul_; }

  void set_params_frozen(bool frozen);
  void set_thresholds_frozen(bool frozen);
  void zero_grad();

  // Converts weights and thresholds into integer layers for QuantState::integer.
  // Must be called again after any parameter or threshold change.
  void prepare_integer_inference();
  bool integer_ready() const { return integer_ready_; }

  Encoded encode(Graph& g, const TokenMatrix& src, const ForwardOptions& opts);
  // tgt_in starts with kEosId. Returns logits [batch*tgt_len x vocab].
  Var decode(Graph& g, const Encoded& enc, const TokenMatrix& tgt_in, const ForwardOptions& opts);
  Var forward(Graph& g, const TokenMatrix& src, const TokenMatrix& tgt_in, const ForwardOptions& opts);

 private:
  struct Norm {
    Parameter* gain;
    Parameter* bias;
  };
  struct Attention {
    std::size_t q, k, v, o;  // dense site indices
    std::size_t scores, context;  // matmul site indices
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Attention self;
    std::size_t fc1, fc2;
  };
  struct DecoderLayer {
    Norm ln1, ln2, ln3;
    Attention self, cross;
    std::size_t fc1, fc2;
  };

  Parameter& add_parameter(std::string name, Tensor value);
  Norm add_norm(const std::string& prefix);
  std::size_t add_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  std::size_t add_matmul(const std::string& name, const char* left, const char* right, bool left_unsigned);
  Attention add_attention(const std::string& prefix, std::mt19937_64& rng);

  Var dense(Graph& g, Var x, std::size_t site, const ForwardOptions& opts);
  Var attend(Graph& g, const Attention& a, Var x_q, Var x_kv, const ops::AttentionDims& dims, const Tensor* mask,
             const ForwardOptions& opts);
  Var norm(Graph& g, Var x, const Norm& n);
  Var weight(Graph& g, Parameter& p, const ForwardOptions& opts);
  Var embed(Graph& g, const TokenMatrix& tokens, const ForwardOptions& opts);
  Var residual_dropout(Var x, const ForwardOptions& opts);
  void require_tokens(const TokenMatrix& t, const char* what) const;

  TransformerConfig config_;
  std::deque<Parameter> params_;
  ScalarRegistry registry_;
  std::vector<DenseSite> dense_;
  std::vector<MatmulSite> matmul_;
  Parameter* embedding_ = nullptr;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm encoder_norm_{}, decoder_norm_{};
  std::size_t proj_ = 0;
  Tensor positions_;  // [max_len x d_model] sinusoidal table

  std::vector<int_infer::IntDenseLayer> int_dense_;
  std::vector<int_infer::IntAttentionSite> int_matmul_;
  bool integer_ready_ = false;
};

// Independent RNG stream derived from a run seed and a stream name.
std::mt19937_64 named_stream(std::uint64_t seed, std::string_view name);

// Token-level accuracy of argmax(logits) over positions whose target != pad.
struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};
Accuracy token_accuracy(const Tensor& logits, const TokenMatrix& targets);

}  // namespace qatf::model
