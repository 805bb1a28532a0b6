#include "qars/bertscore.hpp"

#include <cmath>

#include "qars/common.hpp"

namespace qars {

namespace {

template <typename T>
double cosine(const T* a, const T* b, std::size_t d) {
  double dot = 0.0, norm_a = 0.0, norm_b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    norm_a += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    norm_b += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  // sqrt(norm_a * norm_b) rather than sqrt(a)*sqrt(b): IEEE sqrt(x*x) == x,
  // so identical vectors score exactly 1.
  return dot / std::sqrt(norm_a * norm_b);
}

// Mean over rows of `from` of the best cosine against rows of `against`.
// Used for both directions so the two are arithmetically identical.
template <typename T>
double greedy_match(const Tensor<T>& from, const Tensor<T>& against) {
  const std::size_t n = from.dim(0), d = from.dim(1);
  const std::size_t m = against.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double c = cosine(from.values().data() + i * d,
                              against.values().data() + j * d, d);
      if (c > best) best = c;
    }
    total += best;
  }
  return total / static_cast<double>(n);
}

}  // namespace

template <typename T>
BertScoreResult bertscore(const SegmentEmbeddings<T>& hyp,
                          const SegmentEmbeddings<T>& ref) {
  if (hyp.tokens.rank() != 2 || ref.tokens.rank() != 2) {
    throw ShapeError("bertscore: token embeddings must be matrices");
  }
  if (hyp.tokens.dim(0) == 0 || ref.tokens.dim(0) == 0) {
    throw ShapeError("bertscore: empty side");
  }
  if (hyp.tokens.dim(1) != ref.tokens.dim(1)) {
    throw ShapeError("bertscore: dimension mismatch, " +
                     std::to_string(hyp.tokens.dim(1)) + " vs " +
                     std::to_string(ref.tokens.dim(1)));
  }
  BertScoreResult result;
  result.precision = greedy_match(hyp.tokens, ref.tokens);
  result.recall = greedy_match(ref.tokens, hyp.tokens);
  // Harmonic mean only when both sides are positive; cosines can go
  // negative and the plain formula would leave [-1, 1] there.
  if (result.precision > 0.0 && result.recall > 0.0) {
    result.f1 = 2.0 * result.precision * result.recall /
                (result.precision + result.recall);
  } else {
    result.f1 = 0.0;
  }
  return result;
}

template <typename T>
std::vector<BertScoreResult> bertscore_corpus(
    const std::vector<SegmentEmbeddings<T>>& hyps,
    const std::vector<SegmentEmbeddings<T>>& refs) {
  if (hyps.size() != refs.size()) {
    throw ValueError("bertscore: " + std::to_string(hyps.size()) +
                     " hypothesis segments vs " + std::to_string(refs.size()) +
                     " reference segments");
  }
  std::vector<BertScoreResult> results(hyps.size());
  [[maybe_unused]] const int threads = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static) \
    if (threads > 1 && hyps.size() > 1)
#endif
  for (long long i = 0; i < static_cast<long long>(hyps.size()); ++i) {
    results[static_cast<std::size_t>(i)] =
        bertscore(hyps[static_cast<std::size_t>(i)],
                  refs[static_cast<std::size_t>(i)]);
  }
  return results;
}

#define QARS_INSTANTIATE_BERTSCORE(T)                                        \
  template BertScoreResult bertscore<T>(const SegmentEmbeddings<T>&,         \
                                        const SegmentEmbeddings<T>&);        \
  template std::vector<BertScoreResult> bertscore_corpus<T>(                 \
      const std::vector<SegmentEmbeddings<T>>&,                              \
      const std::vector<SegmentEmbeddings<T>>&);

QARS_INSTANTIATE_BERTSCORE(float)
QARS_INSTANTIATE_BERTSCORE(double)
#undef QARS_INSTANTIATE_BERTSCORE

}  // namespace qars
