// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel inner loops. Every kernel has a portable scalar reference in
// kernels_scalar.cpp and, on x86-64, an AVX2/FMA variant in kernels_avx2.cpp.
// The active table is chosen once at first use from the CPU feature bits; the
// QATF_KERNELS environment variable ("scalar" or "avx2") overrides the choice.
//
// Contract shared by both tables:
//   igemm, round_clip, round_clip_int, abs_max  bit-identical across variants
//   sgemm                                      same math, FMA and summation
//                                              order may differ (tested to 1e-5)

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace qatf::kernels {

struct KernelTable {
  std::string_view name;

  // C[m x n] (+)= op(A) * op(B), row-major and densely packed.
  // op(A) is [m x k]: A is stored [m x k], or [k x m] when trans_a.
  // op(B) is [k x n]: B is stored [k x n], or [n x k] when trans_b.
  void (*sgemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
                const float* b, float* c, bool accumulate);

  // C[m x n] = A[m x k] * B[k x n] with 32-bit accumulation. No floating point.
  void (*igemm)(std::size_t m, std::size_t n, std::size_t k, const std::int32_t* a, const std::int32_t* b,
                std::int32_t* c);

  // out[i] = clip(round_half_even(x[i] / scale), lo, hi), integer-valued floats.
  void (*round_clip)(const float* x, std::size_t n, float scale, float lo, float hi, float* out);

  // Same as round_clip but emits 32-bit integers.
  void (*round_clip_int)(const float* x, std::size_t n, float scale, float lo, float hi, std::int32_t* out);

  // max_i |x[i]|, 0 for n == 0.
  float (*abs_max)(const float* x, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the variant is not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();

// Table used by the library. Resolved once; thread-safe.
const KernelTable& active();

// Test hook: make `table` the active one until the returned guard is destroyed.
class ScopedKernelOverride {
 public:
  explicit ScopedKernelOverride(const KernelTable& table);
  ~ScopedKernelOverride();
  ScopedKernelOverride(const ScopedKernelOverride&) = delete;
  ScopedKernelOverride& operator=(const ScopedKernelOverride&) = delete;

 private:
  const KernelTable* previous_;
};

}  // namespace qatf::kernels
