// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qatf/kernels.hpp"

namespace qatf::kernels {
namespace {

void sgemm_scalar(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
                  const float* b, float* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(float));
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = trans_a ? a[p * m + i] : a[i * k + p];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const float* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void igemm_scalar(std::size_t m, std::size_t n, std::size_t k, const std::int32_t* a, const std::int32_t* b,
                  std::int32_t* c) {
  std::fill(c, c + m * n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::int32_t* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const std::int32_t av = a[i * k + p];
      const std::int32_t* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// nearbyint honours the default FE_TONEAREST mode, i.e. round half to even.
// The clamp is written as (r > lo ? r : lo) so that -0.0 against lo == 0
// resolves the same way as the vector max/min instructions.
inline float round_clip_one(float x, float scale, float lo, float hi) {
  float r = std::nearbyint(x / scale);
  r = r > lo ? r : lo;
  return r < hi ? r : hi;
}

void round_clip_scalar(const float* x, std::size_t n, float scale, float lo, float hi, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = round_clip_one(x[i], scale, lo, hi);
}

void round_clip_int_scalar(const float* x, std::size_t n, float scale, float lo, float hi, std::int32_t* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int32_t>(round_clip_one(x[i], scale, lo, hi));
}

float abs_max_scalar(const float* x, std::size_t n) {
  float m = 0.0f;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar", sgemm_scalar, igemm_scalar, round_clip_scalar, round_clip_int_scalar, abs_max_scalar,
  };
  return table;
}

}  // namespace qatf::kernels
