// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-tensor symmetric quantization with clip-after-round:
//
//   signed    X_int  = clip(round(X / s), -p, p),      p = 2^(b-1) - 1
//   unsigned  X_uint = clip(round(X / s), 0, 2^b - 1),  X >= 0
//
// round() is round-half-to-even. The FP32 input is never clipped; saturation
// only happens on the rounded integer. X ~= s * X_int.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qatf/autograd.hpp"
#include "qatf/ops.hpp"
#include "qatf/tensor.hpp"

namespace qatf {

struct QuantConfig {
  int bits = 8;
  bool is_signed = true;
  // Forward path snaps learned scales to 2^round(z).
  bool power_of_two_scalars = false;

  void validate() const;
  // Largest code: p for signed, 2^b - 1 for unsigned.
  std::int32_t max_code() const;
  std::int32_t min_code() const { return is_signed ? -max_code() : 0; }

  QuantConfig with_signed(bool s) const {
    QuantConfig c = *this;
    c.is_signed = s;
    return c;
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

// Scale used for an all-zero tensor; quantizing zeros with it is a no-op.
inline constexpr float kZeroRangeScale = 0x1p-24f;

// Learned threshold s = 2^z, trained in the log domain.
struct ThresholdScalar {
  std::string site_name;
  float z = 0.0f;
  float grad = 0.0f;  // dL/dz, accumulated by fake_quant backward
  bool frozen = false;
  bool is_signed = true;

  float scale(bool power_of_two = false) const;
  // z = log2 of the range-preserving scale for a tensor whose max |x| is max_abs.
  void init_from_range(float max_abs, const QuantConfig& cfg);
};

struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> data;  // b-bit codes in a 32-bit container
  float scale = 1.0f;
  int bits = 8;
  bool is_signed = true;

  QuantConfig config() const { return QuantConfig{bits, is_signed, false}; }
  Tensor dequantize() const;
  // Throws DomainError when a code lies outside the b-bit range.
  void validate() const;

  friend bool operator==(const IntTensor&, const IntTensor&) = default;
};

// Round half to even. Throws NumericError for non-finite input.
std::int32_t bankers_round(float x);

IntTensor quantize_signed(const Tensor& x, float scale, const QuantConfig& cfg);
IntTensor quantize_unsigned(const Tensor& x, float scale, const QuantConfig& cfg);
// Dispatches on cfg.is_signed.
IntTensor quantize(const Tensor& x, float scale, const QuantConfig& cfg);

// max|x| / p; kZeroRangeScale for an all-zero tensor.
float range_scalar_signed(const Tensor& x, const QuantConfig& cfg);
// max(x) / (2^b - 1); requires x >= 0.
float range_scalar_unsigned(const Tensor& x, const QuantConfig& cfg);
float range_scalar(const Tensor& x, const QuantConfig& cfg);

// Output multiplier for a product of two quantized operands, optionally folded
// with an extra constant. Shared by the fake-quant and integer paths so both
// apply bit-identical scales.
inline float product_scale(float scale_a, float scale_b, float extra = 1.0f) { return (scale_a * scale_b) * extra; }

namespace quant_ops {

// y = s * clip(round(x / s)) with s = th.scale(). Backward:
//   dy/dx = 1 inside the integer range, 0 where round(x/s) saturated;
//   dy/dz = s ln2 (round(x/s) - x/s) inside, s ln2 * clip bound outside,
// summed over elements into th.grad unless th.frozen.
ops::GridVar fake_quant(Var x, ThresholdScalar& th, const QuantConfig& cfg);

// Same forward with s recomputed from the current tensor range (or taken from
// pinned_scale when positive). Never saturates, so the gradient to x is the
// identity; there is no trainable scale.
ops::GridVar fake_quant_range_preserving(Var x, const QuantConfig& cfg, float pinned_scale = 0.0f);

}  // namespace quant_ops

}  // namespace qatf
