// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include <array>
#include <cstdint>

#include "ccot/kernels.hpp"

namespace ccot::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// Lane mask with the first `count` lanes enabled (count in 0..8).
inline __m256i lane_mask(std::size_t count) {
  alignas(32) static constexpr std::array<std::int32_t, 16> kBits = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                                     0,  0,  0,  0,  0,  0,  0,  0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kBits.data() + 8 - count));
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  if (i < n) {
    const __m256i m = lane_mask(n - i);
    acc1 = _mm256_fmadd_ps(_mm256_maskload_ps(a + i, m), _mm256_maskload_ps(b + i, m), acc1);
  }
  return hsum(_mm256_add_ps(acc0, acc1));
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  if (i < n) {
    const __m256i m = lane_mask(n - i);
    const __m256 r = _mm256_fmadd_ps(va, _mm256_maskload_ps(x + i, m), _mm256_maskload_ps(y + i, m));
    _mm256_maskstore_ps(y + i, m, r);
  }
}

// R rows x 16 columns register tile. Masked loads keep the per-element FMA
// sequence identical for edge tiles, so results do not depend on tiling.
template <int R, bool Full>
inline void tile(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float* c, std::size_t ldc, bool accumulate, __m256i m0, __m256i m1) {
  __m256 acc[R][2];
  for (int r = 0; r < R; ++r) {
    if (accumulate) {
      acc[r][0] = Full ? _mm256_loadu_ps(c + r * ldc) : _mm256_maskload_ps(c + r * ldc, m0);
      acc[r][1] = Full ? _mm256_loadu_ps(c + r * ldc + 8) : _mm256_maskload_ps(c + r * ldc + 8, m1);
    } else {
      acc[r][0] = _mm256_setzero_ps();
      acc[r][1] = _mm256_setzero_ps();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * ldb;
    const __m256 b0 = Full ? _mm256_loadu_ps(brow) : _mm256_maskload_ps(brow, m0);
    const __m256 b1 = Full ? _mm256_loadu_ps(brow + 8) : _mm256_maskload_ps(brow + 8, m1);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < R; ++r) {
    if (Full) {
      _mm256_storeu_ps(c + r * ldc, acc[r][0]);
      _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
    } else {
      _mm256_maskstore_ps(c + r * ldc, m0, acc[r][0]);
      _mm256_maskstore_ps(c + r * ldc + 8, m1, acc[r][1]);
    }
  }
}

template <int R>
void row_block(GemmShape s, const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
               std::size_t ldc, bool accumulate) {
  const __m256i full = lane_mask(8);
  std::size_t j = 0;
  for (; j + 16 <= s.n; j += 16) {
    tile<R, true>(s.k, a, lda, b + j, ldb, c + j, ldc, accumulate, full, full);
  }
  if (j < s.n) {
    const std::size_t rest = s.n - j;
    const __m256i m0 = lane_mask(rest >= 8 ? 8 : rest);
    const __m256i m1 = lane_mask(rest > 8 ? rest - 8 : 0);
    tile<R, false>(s.k, a, lda, b + j, ldb, c + j, ldc, accumulate, m0, m1);
  }
}

void gemm_nn_avx2(GemmShape s, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                  float* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= s.m; i += 4) row_block<4>(s, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  switch (s.m - i) {
    case 3: row_block<3>(s, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    case 2: row_block<2>(s, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    case 1: row_block<1>(s, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    default: break;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, gemm_nn_avx2};
  return &table;
}

}  // namespace ccot::kernels
