#include "qars/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "qars/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qars {

namespace {
std::atomic<int> g_threads{1};
}

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_thread_count(int n) {
  g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

int threads_from_env() {
  const char* raw = std::getenv("QARS_THREADS");
  if (raw == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1) return 1;
  return static_cast<int>(v);
}

namespace kernels {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelCutoff = 1u << 15;

// nn uses the i-k-j order so the inner loop walks B and C contiguously.
// Every C element still accumulates over k in ascending order, which is
// what keeps serial and parallel results bitwise identical.
template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aval = a[i * k + kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
}

template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = c[i * n + j];
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aval = a[kk * m + i];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
}

template <typename T>
void matmul_nn_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aval = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
#else
  (void)threads;
  matmul_nn_serial(a, b, c, m, k, n);
#endif
}

template <typename T>
void matmul_nt_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = c[static_cast<std::size_t>(i) * n + j];
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
#else
  (void)threads;
  matmul_nt_serial(a, b, c, m, k, n);
#endif
}

template <typename T>
void matmul_tn_parallel(const T* a, const T* b, T* c,
                        std::size_t m, std::size_t k, std::size_t n,
                        int threads) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aval = a[kk * m + static_cast<std::size_t>(i)];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
#else
  (void)threads;
  matmul_tn_serial(a, b, c, m, k, n);
#endif
}

namespace {
inline bool use_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return thread_count() > 1 && m * k * n >= kParallelCutoff && m > 1;
}
}  // namespace

template <typename T>
void matmul_nn(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, k, n)) {
    matmul_nn_parallel(a, b, c, m, k, n, thread_count());
  } else {
    matmul_nn_serial(a, b, c, m, k, n);
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, k, n)) {
    matmul_nt_parallel(a, b, c, m, k, n, thread_count());
  } else {
    matmul_nt_serial(a, b, c, m, k, n);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c,
               std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, k, n)) {
    matmul_tn_parallel(a, b, c, m, k, n, thread_count());
  } else {
    matmul_tn_serial(a, b, c, m, k, n);
  }
}

#define QARS_INSTANTIATE_KERNELS(T)                                          \
  template void matmul_nn_serial<T>(const T*, const T*, T*, std::size_t,     \
                                    std::size_t, std::size_t);               \
  template void matmul_nt_serial<T>(const T*, const T*, T*, std::size_t,     \
                                    std::size_t, std::size_t);               \
  template void matmul_tn_serial<T>(const T*, const T*, T*, std::size_t,     \
                                    std::size_t, std::size_t);               \
  template void matmul_nn_parallel<T>(const T*, const T*, T*, std::size_t,   \
                                      std::size_t, std::size_t, int);        \
  template void matmul_nt_parallel<T>(const T*, const T*, T*, std::size_t,   \
                                      std::size_t, std::size_t, int);        \
  template void matmul_tn_parallel<T>(const T*, const T*, T*, std::size_t,   \
                                      std::size_t, std::size_t, int);        \
  template void matmul_nn<T>(const T*, const T*, T*, std::size_t,            \
                             std::size_t, std::size_t);                      \
  template void matmul_nt<T>(const T*, const T*, T*, std::size_t,            \
                             std::size_t, std::size_t);                      \
  template void matmul_tn<T>(const T*, const T*, T*, std::size_t,            \
                             std::size_t, std::size_t);

QARS_INSTANTIATE_KERNELS(float)
QARS_INSTANTIATE_KERNELS(double)
#undef QARS_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace qars
