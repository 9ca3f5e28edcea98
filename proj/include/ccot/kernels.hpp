#pragma once
// Dense float kernels used by every forward/backward pass.
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant. The active table is picked once at startup from CPUID; setting
// CCOT_KERNELS=scalar forces the reference path.
//
// gemm contract: C[M x N] = (accumulate ? C : 0) + op(A) * op(B), row-major
// with explicit leading dimensions. Every output element is a sequential sum
// over k = 0..K-1, so a row of C never depends on any other row of A.

#include <cstddef>
#include <string_view>

namespace ccot::kernels {

enum class Trans { No, Yes };

struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

struct KernelTable {
  std::string_view name;
  float (*dot)(const float* a, const float* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  // Non-transposed core: C = (acc ? C : 0) + A[m x k] * B[k x n].
  void (*gemm_nn)(GemmShape s, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                  float* c, std::size_t ldc, bool accumulate);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();
bool cpu_supports_avx2();

const KernelTable& active();
// Returns false if the requested table is unavailable on this CPU.
bool select(std::string_view name);

inline float dot(const float* a, const float* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy(alpha, x, y, n); }

// General entry point; transposed operands are repacked into scratch and
// forwarded to the active gemm_nn. For Trans::Yes, A is stored k x m and B is
// stored n x k.
void gemm(Trans ta, Trans tb, GemmShape s, const float* a, std::size_t lda, const float* b,
          std::size_t ldb, float* c, std::size_t ldc, bool accumulate);

void gemm_with(const KernelTable& table, Trans ta, Trans tb, GemmShape s, const float* a,
               std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
               bool accumulate);

}  // namespace ccot::kernels
