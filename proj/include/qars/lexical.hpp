// lexical.hpp -- reference-based lexical baselines: corpus BLEU and chrF.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "qars/text.hpp"

namespace qars {

struct MetricScore {
  std::string name;
  double value = 0.0;  // in [0, 1]
  std::map<std::string, double> details;
};

// Corpus-level BLEU with clipped modified n-gram precisions, geometric mean
// over orders 1..max_n and brevity penalty min(1, e^(1 - r/c)). No smoothing:
// a zero precision zeroes the score. Orders with zero total hypothesis
// n-grams across the corpus are skipped so identity still scores 1 on short
// segments. Single reference per hypothesis.
// Details: p1..p<max_n>, brevity_penalty, length_ratio (r/c).
MetricScore bleu(const std::vector<text::TokenSeq>& hyps,
                 const std::vector<text::TokenSeq>& refs, std::size_t max_n = 4);

// Sentence chrF: character n-gram precision/recall averaged uniformly over
// orders 1..max_n, combined as (1+b^2)PR / (b^2 P + R). Orders empty on both
// sides are skipped; an order with an empty hypothesis side contributes P=0.
// Details: precision, recall.
MetricScore chrf(const std::string& hyp, const std::string& ref,
                 std::size_t max_n = 6, double beta = 2.0);

}  // namespace qars
