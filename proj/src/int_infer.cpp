// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/int_infer.hpp"

#include <fmt/format.h>

#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"

namespace qatf::int_infer {
namespace {

void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(fmt::format("{} must be 2-D, got {}", what, shape_str(s)));
}

void require_at_most_8_bits(const IntTensor& t, const char* what) {
  if (t.bits > 8) throw ConfigError(fmt::format("{} has {} bits; the integer path supports at most 8", what, t.bits));
}

// Columns [col, col + width) of a [rows x stride] code matrix.
std::vector<std::int32_t> slice_columns(const std::vector<std::int32_t>& src, std::size_t row0, std::size_t rows,
                                        std::size_t stride, std::size_t col, std::size_t width) {
  std::vector<std::int32_t> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = src[(row0 + r) * stride + col + c];
  }
  return out;
}

std::vector<std::int32_t> transpose(const std::vector<std::int32_t>& src, std::size_t rows, std::size_t cols) {
  std::vector<std::int32_t> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

}  // namespace

void check_accumulator_bound(std::int64_t max_a, std::int64_t max_b, std::size_t k) {
  const long double worst = static_cast<long double>(max_a) * static_cast<long double>(max_b) * static_cast<long double>(k);
  if (worst >= 2147483648.0L) {
    throw ConfigError(fmt::format("INT32 accumulator may overflow: {} x {} x k={} >= 2^31", max_a, max_b, k));
  }
}

AccTensor int_matmul(const IntTensor& a, const IntTensor& b) {
  require_matrix(a.shape, "left operand");
  require_matrix(b.shape, "right operand");
  require_at_most_8_bits(a, "left operand");
  require_at_most_8_bits(b, "right operand");
  if (!b.is_signed) throw ConfigError("right operand of an integer matmul must be signed");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k) {
    throw DimensionError(fmt::format("int_matmul inner dimensions disagree: {} vs {}", shape_str(a.shape), shape_str(b.shape)));
  }
  check_accumulator_bound(a.config().max_code(), b.config().max_code(), k);
  a.validate();
  b.validate();
  AccTensor out{{m, n}, std::vector<std::int32_t>(m * n)};
  kernels::active().igemm(m, n, k, a.data.data(), b.data.data(), out.data.data());
  return out;
}

IntDenseLayer IntDenseLayer::build(const Tensor& weight, const Tensor* bias, float input_scale, const QuantConfig& cfg,
                                   bool transposed, float weight_scale, float bias_scale) {
  if (weight.rank() != 2) throw DimensionError(fmt::format("dense weight must be 2-D, got {}", shape_str(weight.shape())));
  if (!(input_scale > 0.0f)) throw DomainError("dense input scale must be positive");
  const QuantConfig scfg = cfg.with_signed(true);
  IntDenseLayer layer;
  const float sw = weight_scale > 0.0f ? weight_scale : range_scalar_signed(weight, scfg);
  IntTensor w = quantize_signed(weight, sw, scfg);
  if (transposed) {
    w.data = transpose(w.data, w.shape[0], w.shape[1]);
    w.shape = {w.shape[1], w.shape[0]};
  }
  if (w.bits > 8) throw ConfigError(fmt::format("dense layer has {} bits; the integer path supports at most 8", w.bits));
  check_accumulator_bound(scfg.max_code(), scfg.max_code(), w.shape[0]);
  layer.weight = std::move(w);
  if (bias) {
    if (bias->size() != layer.out_features()) {
      throw DimensionError(fmt::format("bias {} does not match {} outputs", shape_str(bias->shape()), layer.out_features()));
    }
    const float sb = bias_scale > 0.0f ? bias_scale : range_scalar_signed(*bias, scfg);
    layer.bias = quantize_signed(*bias, sb, scfg);
  }
  layer.input_scale = input_scale;
  layer.inv_input_scale = 1.0f / input_scale;
  layer.output_scale = product_scale(input_scale, layer.weight.scale);
  return layer;
}

Tensor dense_forward_int(const Tensor& x, const IntDenseLayer& layer, const QuantConfig& cfg) {
  const std::size_t in = layer.in_features(), out = layer.out_features();
  if (x.cols() != in) {
    throw DimensionError(fmt::format("dense input {} does not match {} input features", shape_str(x.shape()), in));
  }
  if (cfg.bits != layer.weight.bits) {
    throw ConfigError(fmt::format("layer holds {}-bit weights but configuration asks for {} bits", layer.weight.bits, cfg.bits));
  }
  const std::size_t rows = x.rows();
  // Codes use X / s_X, the same operation as the training-time quantizer.
  const IntTensor xq = quantize_signed(x.reshaped({rows, in}), layer.input_scale, cfg.with_signed(true));
  const AccTensor acc = int_matmul(xq, layer.weight);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  for (std::size_t i = 0; i < acc.data.size(); ++i) y[i] = layer.output_scale * static_cast<float>(acc.data[i]);
  if (layer.bias) {
    const Tensor b = layer.bias->dequantize();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < out; ++c) y[r * out + c] += b[c];
    }
  }
  return y;
}

void IntAttentionSite::validate() const {
  if (!(s_q > 0.0f && s_k > 0.0f && s_u > 0.0f && s_v > 0.0f)) throw DomainError("attention threshold scalars must be positive");
  if (d_k == 0) throw DomainError("attention d_k must be positive");
}

Tensor attention_forward_int(const Tensor& q, const Tensor& k, const Tensor& v, const IntAttentionSite& site,
                             const QuantConfig& cfg) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("single-head attention expects 2-D operands");
  ops::AttentionDims dims;
  dims.batch = 1;
  dims.heads = 1;
  dims.query_len = q.dim(0);
  dims.key_len = k.dim(0);
  dims.d_model = q.dim(1);
  if (site.d_k != dims.d_model) {
    throw DimensionError(fmt::format("site d_k {} does not match operand width {}", site.d_k, dims.d_model));
  }
  return attention_forward_int(q, k, v, site, cfg, dims, nullptr);
}

Tensor attention_forward_int(const Tensor& q, const Tensor& k, const Tensor& v, const IntAttentionSite& site,
                             const QuantConfig& cfg, const ops::AttentionDims& dims, const Tensor* mask) {
  site.validate();
  const std::size_t B = dims.batch, H = dims.heads, Tq = dims.query_len, Tk = dims.key_len, D = dims.d_model;
  if (H == 0 || D % H != 0) throw DimensionError(fmt::format("d_model {} not divisible by {} heads", D, H));
  const std::size_t dh = dims.head_dim();
  if (q.size() != B * Tq * D || k.size() != B * Tk * D || v.size() != B * Tk * D) {
    throw DimensionError(fmt::format("attention operands {} {} {} do not match batch {} x ({}, {}) x {}", shape_str(q.shape()),
                                     shape_str(k.shape()), shape_str(v.shape()), B, Tq, Tk, D));
  }
  if (mask && mask->size() != B * Tq * Tk) throw DimensionError("attention mask size mismatch");
  if (cfg.bits > 8) throw ConfigError(fmt::format("{}-bit attention is not supported by the integer path", cfg.bits));
  const QuantConfig scfg = cfg.with_signed(true);
  const QuantConfig ucfg = cfg.with_signed(false);
  check_accumulator_bound(scfg.max_code(), scfg.max_code(), dh);
  check_accumulator_bound(ucfg.max_code(), scfg.max_code(), Tk);

  const IntTensor qi = quantize_signed(q, site.s_q, scfg);
  const IntTensor ki = quantize_signed(k, site.s_k, scfg);
  const IntTensor vi = quantize_signed(v, site.s_v, scfg);
  const float score_scale = product_scale(site.s_q, site.s_k, ops::attention_logit_scale(dh));
  const float context_scale = product_scale(site.s_u, site.s_v);
  const auto& kern = kernels::active();

  Tensor out({B * Tq, D}, 0.0f);
  std::vector<std::int32_t> acc(Tq * std::max(Tk, dh));
  std::vector<float> scores(Tq * Tk), weights(Tq * Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const auto qh = slice_columns(qi.data, b * Tq, Tq, D, h * dh, dh);
      const auto kt = transpose(slice_columns(ki.data, b * Tk, Tk, D, h * dh, dh), Tk, dh);
      kern.igemm(Tq, Tk, dh, qh.data(), kt.data(), acc.data());
      for (std::size_t i = 0; i < Tq * Tk; ++i) {
        scores[i] = score_scale * static_cast<float>(acc[i]);
        if (mask) scores[i] += (*mask)[b * Tq * Tk + i];
      }
      ops::softmax_rows(scores.data(), weights.data(), Tq, Tk);
      const IntTensor ui = quantize_unsigned(Tensor({Tq, Tk}, weights), site.s_u, ucfg);
      const auto vh = slice_columns(vi.data, b * Tk, Tk, D, h * dh, dh);
      kern.igemm(Tq, dh, Tk, ui.data.data(), vh.data(), acc.data());
      for (std::size_t t = 0; t < Tq; ++t) {
        float* row = out.ptr() + (b * Tq + t) * D + h * dh;
        for (std::size_t d = 0; d < dh; ++d) row[d] = context_scale * static_cast<float>(acc[t * dh + d]);
      }
    }
  }
  return out;
}

}  // namespace qatf::int_infer
