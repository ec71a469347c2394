#pragma once

// Row-major GEMM kernels. Every kernel accumulates into C.

#include <cstddef>

#include "harakat/tensor.hpp"

namespace harakat::linalg {

/// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);
/// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);
/// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace harakat::linalg
