// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/quant.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"

namespace qatf {

void QuantConfig::validate() const {
  if (bits < 2 || bits > 16) throw ConfigError(fmt::format("quantization bits must be in [2, 16], got {}", bits));
}

std::int32_t QuantConfig::max_code() const {
  validate();
  return is_signed ? (std::int32_t{1} << (bits - 1)) - 1 : (std::int32_t{1} << bits) - 1;
}

float ThresholdScalar::scale(bool power_of_two) const { return std::exp2(power_of_two ? std::nearbyint(z) : z); }

void ThresholdScalar::init_from_range(float max_abs, const QuantConfig& cfg) {
  const float s = max_abs > 0.0f ? max_abs / static_cast<float>(cfg.max_code()) : kZeroRangeScale;
  z = std::log2(s);
}

Tensor IntTensor::dequantize() const {
  Tensor out(shape);
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = scale * static_cast<float>(data[i]);
  return out;
}

void IntTensor::validate() const {
  const QuantConfig cfg = config();
  const std::int32_t lo = cfg.min_code(), hi = cfg.max_code();
  if (shape_size(shape) != data.size()) throw DimensionError("integer tensor shape does not match its data");
  if (!(scale > 0.0f)) throw DomainError("integer tensor scale must be positive");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] < lo || data[i] > hi) {
      throw DomainError(fmt::format("code {} at index {} outside [{}, {}]", data[i], i, lo, hi));
    }
  }
}

std::int32_t bankers_round(float x) {
  if (!std::isfinite(x)) throw NumericError(fmt::format("cannot round non-finite value {}", x));
  return static_cast<std::int32_t>(std::nearbyint(x));
}

namespace {

void check_scale(float scale) {
  if (!(scale > 0.0f) || !std::isfinite(scale)) throw DomainError(fmt::format("threshold scalar must be > 0, got {}", scale));
}

void check_finite(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw NumericError(fmt::format("non-finite value at index {}", i));
  }
}

void check_nonnegative(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0f) {
      throw PreconditionError(fmt::format("unsigned quantization needs x >= 0; element {} is {}", i, x[i]));
    }
  }
}

IntTensor quantize_impl(const Tensor& x, float scale, const QuantConfig& cfg) {
  check_scale(scale);
  check_finite(x);
  IntTensor out{x.shape(), std::vector<std::int32_t>(x.size()), scale, cfg.bits, cfg.is_signed};
  kernels::active().round_clip_int(x.ptr(), x.size(), scale, static_cast<float>(cfg.min_code()),
                                   static_cast<float>(cfg.max_code()), out.data.data());
  return out;
}

float range_from_max(float max_abs, const QuantConfig& cfg) {
  if (!std::isfinite(max_abs)) throw NumericError("tensor range is not finite");
  return max_abs > 0.0f ? max_abs / static_cast<float>(cfg.max_code()) : kZeroRangeScale;
}

}  // namespace

IntTensor quantize_signed(const Tensor& x, float scale, const QuantConfig& cfg) {
  if (!cfg.is_signed) throw PreconditionError("quantize_signed called with an unsigned configuration");
  return quantize_impl(x, scale, cfg);
}

IntTensor quantize_unsigned(const Tensor& x, float scale, const QuantConfig& cfg) {
  if (cfg.is_signed) throw PreconditionError("quantize_unsigned called with a signed configuration");
  check_nonnegative(x);
  return quantize_impl(x, scale, cfg);
}

IntTensor quantize(const Tensor& x, float scale, const QuantConfig& cfg) {
  return cfg.is_signed ? quantize_signed(x, scale, cfg) : quantize_unsigned(x, scale, cfg);
}

float range_scalar_signed(const Tensor& x, const QuantConfig& cfg) {
  if (x.empty()) throw DomainError("range scalar of an empty tensor");
  return range_from_max(kernels::active().abs_max(x.ptr(), x.size()), cfg.with_signed(true));
}

float range_scalar_unsigned(const Tensor& x, const QuantConfig& cfg) {
  if (x.empty()) throw DomainError("range scalar of an empty tensor");
  check_nonnegative(x);
  return range_from_max(kernels::active().abs_max(x.ptr(), x.size()), cfg.with_signed(false));
}

float range_scalar(const Tensor& x, const QuantConfig& cfg) {
  return cfg.is_signed ? range_scalar_signed(x, cfg) : range_scalar_unsigned(x, cfg);
}

namespace quant_ops {
namespace {

Tensor fake_quant_values(const Tensor& x, float scale, const QuantConfig& cfg) {
  Tensor y(x.shape());
  kernels::active().round_clip(x.ptr(), x.size(), scale, static_cast<float>(cfg.min_code()),
                               static_cast<float>(cfg.max_code()), y.ptr());
  for (float& v : y.data()) v = scale * v;
  return y;
}

}  // namespace

ops::GridVar fake_quant(Var x, ThresholdScalar& th, const QuantConfig& cfg) {
  const Tensor& xv = x.value();
  if (!cfg.is_signed) check_nonnegative(xv);
  const float s = th.scale(cfg.power_of_two_scalars);
  const float lo = static_cast<float>(cfg.min_code()), hi = static_cast<float>(cfg.max_code());
  ThresholdScalar* target = &th;
  const bool learn_scale = !th.frozen;
  Var y = x.graph->record(
      fake_quant_values(xv, s, cfg), {x},
      [x, target, s, lo, hi](Graph& g, const Tensor&, const Tensor& grad) {
        const Tensor& xv = g.value(x);
        const bool need_x = g.requires_grad(x);
        Tensor* dx = need_x ? &g.grad_buffer(x) : nullptr;
        double dz = 0.0;
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const float ratio = xv[i] / s;
          const float q = std::nearbyint(ratio);
          const bool saturated = q > hi || q < lo;
          if (saturated) {
            dz += static_cast<double>(grad[i]) * (q > hi ? hi : lo);
          } else {
            if (dx) (*dx)[i] += grad[i];
            dz += static_cast<double>(grad[i]) * (static_cast<double>(q) - static_cast<double>(ratio));
          }
        }
        if (!target->frozen) target->grad += static_cast<float>(static_cast<double>(s) * std::numbers::ln2 * dz);
      },
      learn_scale);
  return {y, s};
}

ops::GridVar fake_quant_range_preserving(Var x, const QuantConfig& cfg, float pinned_scale) {
  const Tensor& xv = x.value();
  const float s = pinned_scale > 0.0f ? pinned_scale : range_scalar(xv, cfg);
  const float lo = static_cast<float>(cfg.min_code()), hi = static_cast<float>(cfg.max_code());
  Var y = x.graph->record(fake_quant_values(xv, s, cfg), {x}, [x, s, lo, hi](Graph& g, const Tensor&, const Tensor& grad) {
    // Only a pinned scale can saturate; a range-derived one never does.
    const Tensor& xv = g.value(x);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const float q = std::nearbyint(xv[i] / s);
      if (q <= hi && q >= lo) dx[i] += grad[i];
    }
  });
  return {y, s};
}

}  // namespace quant_ops

}  // namespace qatf
