// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deployment-style integer execution: activations are converted to codes with
// their threshold scalar, multiplied with 32-bit accumulation, and converted
// back with the product of the two operand scalars.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qatf/ops.hpp"
#include "qatf/quant.hpp"

namespace qatf::int_infer {

// 32-bit accumulator matrix.
struct AccTensor {
  Shape shape;
  std::vector<std::int32_t> data;
};

// Throws ConfigError unless k * max_a * max_b < 2^31, i.e. no INT32 overflow.
void check_accumulator_bound(std::int64_t max_a, std::int64_t max_b, std::size_t k);

// Exact integer product A[m x k] * B[k x n]. Operands must be at most 8 bits;
// A may be unsigned (attention weights), B is signed.
AccTensor int_matmul(const IntTensor& a, const IntTensor& b);

struct IntDenseLayer {
  IntTensor weight;               // signed, [in x out]
  std::optional<IntTensor> bias;  // signed, [out]; dequantized before the add
  float input_scale = 1.0f;       // s_X
  float inv_input_scale = 1.0f;   // 1/s_X, the input conversion constant
  float output_scale = 1.0f;      // s_X * s_W, the output conversion constant

  // Offline conversion of FP32 parameters. `weight` is [in x out], or
  // [out x in] when transposed (a tied embedding table). weight_scale and
  // bias_scale override the range-preserving scalars when positive.
  static IntDenseLayer build(const Tensor& weight, const Tensor* bias, float input_scale, const QuantConfig& cfg,
                             bool transposed = false, float weight_scale = 0.0f, float bias_scale = 0.0f);

  std::size_t in_features() const { return weight.shape[0]; }
  std::size_t out_features() const { return weight.shape[1]; }
};

// s_X * s_W * (X_int W_int) + bias with X_int = clip(round(X / s_X), -p, p).
Tensor dense_forward_int(const Tensor& x, const IntDenseLayer& layer, const QuantConfig& cfg);

struct IntAttentionSite {
  float s_q = 1.0f;
  float s_k = 1.0f;
  float s_u = 1.0f;
  float s_v = 1.0f;
  std::size_t d_k = 1;

  void validate() const;
};

// Single head: Q [Tq x d_k], K, V [Tk x d_k].
Tensor attention_forward_int(const Tensor& q, const Tensor& k, const Tensor& v, const IntAttentionSite& site,
                             const QuantConfig& cfg);

// Multi-head over flattened [batch*time x d_model] operands, scalars shared by
// all heads. mask as in ops::attention_scores.
Tensor attention_forward_int(const Tensor& q, const Tensor& k, const Tensor& v, const IntAttentionSite& site,
                             const QuantConfig& cfg, const ops::AttentionDims& dims, const Tensor* mask);

}  // namespace qatf::int_infer
