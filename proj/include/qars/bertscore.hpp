// bertscore.hpp -- greedy cosine matching over token embeddings.
#pragma once

#include <vector>

#include "qars/encoder.hpp"

namespace qars {

struct BertScoreResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// P: mean over hypothesis tokens of the max cosine against reference tokens;
// R: the same with the roles swapped; F: harmonic mean when both are
// positive, else 0. Zero vectors score cosine 0 against everything.
// precision(h, r) == recall(r, h) holds exactly (identical arithmetic).
template <typename T>
BertScoreResult bertscore(const SegmentEmbeddings<T>& hyp,
                          const SegmentEmbeddings<T>& ref);

// Segment-parallel corpus scoring; output order matches input order
// regardless of thread count.
template <typename T>
std::vector<BertScoreResult> bertscore_corpus(
    const std::vector<SegmentEmbeddings<T>>& hyps,
    const std::vector<SegmentEmbeddings<T>>& refs);

}  // namespace qars
