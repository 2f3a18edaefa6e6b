// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops recorded on a Graph. All tensors are FP32; 2-D ops view
// their inputs as [rows x last-axis].

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "qatf/autograd.hpp"

namespace qatf::ops {

// A graph value known to lie exactly on the grid scale * Z, as produced by a
// quantizer. Products of grid operands are evaluated as
// (scale_a * scale_b) * sum(a_int * b_int) with an exact integer sum.
struct GridVar {
  Var var;
  float scale = 1.0f;
};

// A[m x k] * B[k x n].
Var matmul(Var a, Var b);
// A[m x k] * B[n x k]^T.
Var matmul_nt(Var a, Var b);
// Exact-integer product of two grid operands; gradients as for matmul.
Var grid_matmul(GridVar a, GridVar b, bool trans_b = false);

Var add(Var a, Var b);
// x[rows x n] + bias[n], broadcast over rows.
Var add_bias(Var x, Var bias);
Var scale(Var x, float factor);
Var relu(Var x);
Var reshape(Var x, Shape shape);
Var sum(Var x);

Var softmax(Var x, std::size_t axis);
// Row-wise softmax over contiguous rows of width len; the arithmetic used by
// softmax() on its last axis.
void softmax_rows(const float* in, float* out, std::size_t rows, std::size_t len);
// Normalises the last axis.
Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-6f);

// Rows of `table` selected by `ids`: [ids.size() x table.cols()].
Var embedding(Var table, std::span<const std::int32_t> ids);

// Inverted dropout; identity when rate == 0.
Var dropout(Var x, float rate, std::mt19937_64& rng);

// Mean of -log softmax(logits)[target] over rows whose target != pad_id.
// logits is viewed as [targets.size() x vocab].
Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::int32_t pad_id);

// Multi-head attention products over flattened [batch*time x d_model] inputs.
struct AttentionDims {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t d_model = 1;
  std::size_t head_dim() const { return d_model / heads; }
};

// Additive mask value for disallowed key positions.
inline constexpr float kMaskedLogit = -1e9f;

// 1/sqrt(d_k); shared by the float, fake-quant and integer attention paths.
float attention_logit_scale(std::size_t head_dim);

// scores[(b*heads + h)*Tq + i, j] = scale * <q_h[b,i], k_h[b,j]> + mask[b,i,j].
// mask (optional) has shape [batch x Tq x Tk] and holds 0 or kMaskedLogit.
Var attention_scores(Var q, Var k, const AttentionDims& dims, float scale, const Tensor* mask);
Var attention_scores(GridVar q, GridVar k, const AttentionDims& dims, float scale, const Tensor* mask);

// out[b*Tq + i, h*dh + d] = sum_j weights[(b*heads + h)*Tq + i, j] * v[b*Tk + j, h*dh + d].
Var attention_context(Var weights, Var v, const AttentionDims& dims);
Var attention_context(GridVar weights, GridVar v, const AttentionDims& dims);

}  // namespace qatf::ops
