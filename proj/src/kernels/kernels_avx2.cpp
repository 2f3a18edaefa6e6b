// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher has checked the CPU features.

#include "qatf/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cstring>
#include <vector>

namespace qatf::kernels {
namespace {

inline __m256i tail_mask(std::size_t remaining) {
  return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int>(remaining)), _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7));
}

// R rows x V vectors of 8 columns; the last vector is masked when Masked.
template <int R, int V, bool Masked>
inline void sgemm_block(const float* a, bool trans_a, std::size_t m, std::size_t k, const float* b, std::size_t n,
                        float* c, std::size_t i, std::size_t j, __m256i mask) {
  __m256 acc[R][V];
  for (int r = 0; r < R; ++r) {
    float* crow = c + (i + r) * n + j;
    for (int v = 0; v < V; ++v) {
      acc[r][v] = (Masked && v == V - 1) ? _mm256_maskload_ps(crow + 8 * v, mask) : _mm256_loadu_ps(crow + 8 * v);
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * n + j;
    __m256 bv[V];
    for (int v = 0; v < V; ++v) {
      bv[v] = (Masked && v == V - 1) ? _mm256_maskload_ps(brow + 8 * v, mask) : _mm256_loadu_ps(brow + 8 * v);
    }
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_set1_ps(trans_a ? a[p * m + i + r] : a[(i + r) * k + p]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm256_fmadd_ps(av, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r) {
    float* crow = c + (i + r) * n + j;
    for (int v = 0; v < V; ++v) {
      if (Masked && v == V - 1) {
        _mm256_maskstore_ps(crow + 8 * v, mask, acc[r][v]);
      } else {
        _mm256_storeu_ps(crow + 8 * v, acc[r][v]);
      }
    }
  }
}

template <int R>
inline void sgemm_rows(const float* a, bool trans_a, std::size_t m, std::size_t k, const float* b, std::size_t n,
                       float* c, std::size_t i) {
  const __m256i none = _mm256_setzero_si256();
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) sgemm_block<R, 2, false>(a, trans_a, m, k, b, n, c, i, j, none);
  for (; j + 8 <= n; j += 8) sgemm_block<R, 1, false>(a, trans_a, m, k, b, n, c, i, j, none);
  if (j < n) sgemm_block<R, 1, true>(a, trans_a, m, k, b, n, c, i, j, tail_mask(n - j));
}

void sgemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
                const float* b, float* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(float));
  std::vector<float> packed;
  if (trans_b) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
    }
    b = packed.data();
  }
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) sgemm_rows<4>(a, trans_a, m, k, b, n, c, i);
  for (; i < m; ++i) sgemm_rows<1>(a, trans_a, m, k, b, n, c, i);
}

template <int R, int V, bool Masked>
inline void igemm_block(const std::int32_t* a, std::size_t k, const std::int32_t* b, std::size_t n, std::int32_t* c,
                        std::size_t i, std::size_t j, __m256i mask) {
  __m256i acc[R][V];
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < V; ++v) acc[r][v] = _mm256_setzero_si256();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const std::int32_t* brow = b + p * n + j;
    __m256i bv[V];
    for (int v = 0; v < V; ++v) {
      bv[v] = (Masked && v == V - 1) ? _mm256_maskload_epi32(brow + 8 * v, mask)
                                     : _mm256_loadu_si256(reinterpret_cast<const __m256i*>(brow + 8 * v));
    }
    for (int r = 0; r < R; ++r) {
      const __m256i av = _mm256_set1_epi32(a[(i + r) * k + p]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm256_add_epi32(acc[r][v], _mm256_mullo_epi32(av, bv[v]));
    }
  }
  for (int r = 0; r < R; ++r) {
    std::int32_t* crow = c + (i + r) * n + j;
    for (int v = 0; v < V; ++v) {
      if (Masked && v == V - 1) {
        _mm256_maskstore_epi32(crow + 8 * v, mask, acc[r][v]);
      } else {
        _mm256_storeu_si256(reinterpret_cast<__m256i*>(crow + 8 * v), acc[r][v]);
      }
    }
  }
}

template <int R>
inline void igemm_rows(const std::int32_t* a, std::size_t k, const std::int32_t* b, std::size_t n, std::int32_t* c,
                       std::size_t i) {
  const __m256i none = _mm256_setzero_si256();
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) igemm_block<R, 2, false>(a, k, b, n, c, i, j, none);
  for (; j + 8 <= n; j += 8) igemm_block<R, 1, false>(a, k, b, n, c, i, j, none);
  if (j < n) igemm_block<R, 1, true>(a, k, b, n, c, i, j, tail_mask(n - j));
}

void igemm_avx2(std::size_t m, std::size_t n, std::size_t k, const std::int32_t* a, const std::int32_t* b,
                std::int32_t* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) igemm_rows<4>(a, k, b, n, c, i);
  for (; i < m; ++i) igemm_rows<1>(a, k, b, n, c, i);
}

// max/min operand order mirrors the scalar reference so signed zeros agree.
inline __m256 round_clip_vec(__m256 x, __m256 scale, __m256 lo, __m256 hi) {
  __m256 r = _mm256_round_ps(_mm256_div_ps(x, scale), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  r = _mm256_max_ps(r, lo);
  return _mm256_min_ps(r, hi);
}

inline float round_clip_tail(float x, float scale, float lo, float hi) {
  __m128 r = _mm_round_ss(_mm_setzero_ps(), _mm_set_ss(x / scale), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  r = _mm_max_ss(r, _mm_set_ss(lo));
  r = _mm_min_ss(r, _mm_set_ss(hi));
  return _mm_cvtss_f32(r);
}

void round_clip_avx2(const float* x, std::size_t n, float scale, float lo, float hi, float* out) {
  const __m256 vs = _mm256_set1_ps(scale), vlo = _mm256_set1_ps(lo), vhi = _mm256_set1_ps(hi);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, round_clip_vec(_mm256_loadu_ps(x + i), vs, vlo, vhi));
  for (; i < n; ++i) out[i] = round_clip_tail(x[i], scale, lo, hi);
}

void round_clip_int_avx2(const float* x, std::size_t n, float scale, float lo, float hi, std::int32_t* out) {
  const __m256 vs = _mm256_set1_ps(scale), vlo = _mm256_set1_ps(lo), vhi = _mm256_set1_ps(hi);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256i q = _mm256_cvtps_epi32(round_clip_vec(_mm256_loadu_ps(x + i), vs, vlo, vhi));
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + i), q);
  }
  for (; i < n; ++i) out[i] = static_cast<std::int32_t>(round_clip_tail(x[i], scale, lo, hi));
}

float abs_max_avx2(const float* x, std::size_t n) {
  const __m256 sign = _mm256_set1_ps(-0.0f);
  __m256 m = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) m = _mm256_max_ps(m, _mm256_andnot_ps(sign, _mm256_loadu_ps(x + i)));
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, m);
  float best = 0.0f;
  for (float v : lanes) best = v > best ? v : best;
  for (; i < n; ++i) {
    const float v = x[i] < 0.0f ? -x[i] : x[i];
    best = v > best ? v : best;
  }
  return best;
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{
      "avx2", sgemm_avx2, igemm_avx2, round_clip_avx2, round_clip_int_avx2, abs_max_avx2,
  };
  return &table;
}

}  // namespace qatf::kernels

#else

namespace qatf::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace qatf::kernels

#endif
