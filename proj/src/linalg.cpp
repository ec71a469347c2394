#include "harakat/linalg.hpp"

namespace harakat::linalg {

// Loop orders keep the innermost loop contiguous in both C and B so the
// compiler can vectorize it.

void gemm_nn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      crow[j] += (s0 + s1) + (s2 + s3);
    }
  }
}

void gemm_tn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace harakat::linalg
