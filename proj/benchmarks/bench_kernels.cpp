// bench_kernels.cpp -- serial reference vs OpenMP kernels.
//
// Times matmul and corpus bertscore at a few sizes, checks that the parallel
// results are bitwise identical to the serial reference, and prints speedups.
// Usage: qars_bench [threads] (default: hardware concurrency)
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "qars/bertscore.hpp"
#include "qars/common.hpp"
#include "qars/kernels.hpp"
#include "qars/rng.hpp"

using namespace qars;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

std::vector<float> random_buffer(std::size_t n, Rng& rng) {
  std::vector<float> out(n);
  for (auto& v : out) v = static_cast<float>(rng.normal(0.0, 1.0));
  return out;
}

bool bench_matmul(std::size_t size, int threads) {
  Rng rng(42, size);
  const auto a = random_buffer(size * size, rng);
  const auto b = random_buffer(size * size, rng);
  std::vector<float> c_serial(size * size, 0.0f);
  std::vector<float> c_parallel(size * size, 0.0f);

  const int reps = size <= 256 ? 10 : 3;

  auto start = Clock::now();
  for (int r = 0; r < reps; ++r) {
    std::fill(c_serial.begin(), c_serial.end(), 0.0f);
    kernels::matmul_nn_serial(a.data(), b.data(), c_serial.data(), size, size,
                              size);
  }
  const double serial_ms = ms_since(start) / reps;

  start = Clock::now();
  for (int r = 0; r < reps; ++r) {
    std::fill(c_parallel.begin(), c_parallel.end(), 0.0f);
    kernels::matmul_nn_parallel(a.data(), b.data(), c_parallel.data(), size,
                                size, size, threads);
  }
  const double parallel_ms = ms_since(start) / reps;

  const bool identical = c_serial == c_parallel;
  std::printf("matmul %4zux%-4zu  serial %8.2f ms  omp(%d) %8.2f ms  "
              "speedup %5.2fx  bitwise %s\n",
              size, size, serial_ms, threads, parallel_ms,
              serial_ms / parallel_ms, identical ? "equal" : "DIFFER");
  return identical;
}

bool bench_bertscore(std::size_t segments, int threads) {
  Rng rng(7, segments);
  std::vector<SegmentEmbeddings<float>> hyps, refs;
  for (std::size_t i = 0; i < segments; ++i) {
    const std::size_t n = 8 + rng.below(24);
    const std::size_t m = 8 + rng.below(24);
    hyps.push_back(SegmentEmbeddings<float>::from_tokens(
        Tensor<float>({n, 64}, random_buffer(n * 64, rng))));
    refs.push_back(SegmentEmbeddings<float>::from_tokens(
        Tensor<float>({m, 64}, random_buffer(m * 64, rng))));
  }

  set_thread_count(1);
  auto start = Clock::now();
  const auto serial = bertscore_corpus(hyps, refs);
  const double serial_ms = ms_since(start);

  set_thread_count(threads);
  start = Clock::now();
  const auto parallel = bertscore_corpus(hyps, refs);
  const double parallel_ms = ms_since(start);
  set_thread_count(1);

  bool identical = serial.size() == parallel.size();
  for (std::size_t i = 0; identical && i < serial.size(); ++i) {
    identical = serial[i].precision == parallel[i].precision &&
                serial[i].recall == parallel[i].recall &&
                serial[i].f1 == parallel[i].f1;
  }
  std::printf("bertscore %5zu segs  serial %8.2f ms  omp(%d) %8.2f ms  "
              "speedup %5.2fx  bitwise %s\n",
              segments, serial_ms, threads, parallel_ms,
              serial_ms / parallel_ms, identical ? "equal" : "DIFFER");
  return identical;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (argc > 1) threads = std::atoi(argv[1]);
  if (threads < 1) threads = 1;

  bool ok = true;
  for (const std::size_t size : {64, 128, 256, 512}) {
    ok = bench_matmul(size, threads) && ok;
  }
  for (const std::size_t segments : {200, 1000}) {
    ok = bench_bertscore(segments, threads) && ok;
  }
  if (!ok) {
    std::fprintf(stderr, "parallel kernels diverged from the serial reference\n");
    return 1;
  }
  return 0;
}
