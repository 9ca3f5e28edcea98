#include <cstdlib>
#include <vector>

#include "ccot/kernels.hpp"

namespace ccot::kernels {

#if !defined(CCOT_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("CCOT_KERNELS"); env != nullptr && std::string_view(env) == "scalar") {
    return &scalar_table();
  }
  return cpu_supports_avx2() ? avx2_table() : &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = pick_default();
  return table;
}

void transpose(const float* src, std::size_t rows, std::size_t cols, std::size_t ld, std::vector<float>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld + c];
  }
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_table();
    return true;
  }
  if (name == "avx2" && cpu_supports_avx2()) {
    current() = avx2_table();
    return true;
  }
  return false;
}

void gemm_with(const KernelTable& table, Trans ta, Trans tb, GemmShape s, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (s.m == 0 || s.n == 0) return;
  thread_local std::vector<float> scratch_a;
  thread_local std::vector<float> scratch_b;
  if (ta == Trans::Yes) {
    transpose(a, s.k, s.m, lda, scratch_a);
    a = scratch_a.data();
    lda = s.k;
  }
  if (tb == Trans::Yes) {
    transpose(b, s.n, s.k, ldb, scratch_b);
    b = scratch_b.data();
    ldb = s.n;
  }
  table.gemm_nn(s, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm(Trans ta, Trans tb, GemmShape s, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, bool accumulate) {
  gemm_with(active(), ta, tb, s, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace ccot::kernels
