// kernels.hpp -- dense matrix kernels, serial reference + OpenMP variants.
//
// All matrices are row-major. The serial functions are the reference
// implementation; the parallel ones split work over rows of the output and
// run the identical per-element reduction, so results are bitwise equal for
// any thread count. The undecorated entry points dispatch on thread_count()
// and problem size.
//
//   nn: C[m x n] += A[m x k] * B[k x n]
//   nt: C[m x n] += A[m x k] * B[n x k]^T
//   tn: C[m x n] += A[k x m]^T * B[k x n]
#pragma once

#include <cstddef>

namespace qars::kernels {

template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n);
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n);
template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void matmul_nn_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads);
template <typename T>
void matmul_nt_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads);
template <typename T>
void matmul_tn_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads);

template <typename T>
void matmul_nn(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n);
template <typename T>
void matmul_nt(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n);
template <typename T>
void matmul_tn(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n);

}  // namespace qars::kernels
