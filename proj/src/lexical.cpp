#include "qars/lexical.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace qars {

namespace {

std::unordered_map<std::string, std::size_t> token_ngrams(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::unordered_map<std::string, std::size_t> grams;
  if (tokens.size() < n) return grams;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      if (k > 0) key += '\x1f';  // unit separator, cannot occur in a token
      key += tokens[i + k];
    }
    ++grams[key];
  }
  return grams;
}

}  // namespace

MetricScore bleu(const std::vector<text::TokenSeq>& hyps,
                 const std::vector<text::TokenSeq>& refs, std::size_t max_n) {
  if (hyps.empty()) throw ValueError("bleu: empty corpus");
  if (hyps.size() != refs.size()) {
    throw ValueError("bleu: " + std::to_string(hyps.size()) +
                     " hypotheses vs " + std::to_string(refs.size()) +
                     " references");
  }
  if (max_n == 0) throw ValueError("bleu: max_n must be >= 1");

  std::vector<std::size_t> clipped(max_n, 0), total(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t p = 0; p < hyps.size(); ++p) {
    const auto& hyp_tokens = hyps[p].tokens;
    const auto& ref_tokens = refs[p].tokens;
    hyp_len += hyp_tokens.size();
    ref_len += ref_tokens.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hyp_grams = token_ngrams(hyp_tokens, n);
      if (hyp_grams.empty()) continue;
      const auto ref_grams = token_ngrams(ref_tokens, n);
      for (const auto& [gram, count] : hyp_grams) {
        total[n - 1] += count;
        const auto it = ref_grams.find(gram);
        if (it != ref_grams.end())
          clipped[n - 1] += std::min(count, it->second);
      }
    }
  }

  MetricScore score;
  score.name = "bleu";
  double log_precision = 0.0;
  std::size_t used_orders = 0;
  bool zero_precision = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (total[n - 1] == 0) continue;  // degenerate order, skipped
    const double p = static_cast<double>(clipped[n - 1]) /
                     static_cast<double>(total[n - 1]);
    score.details["p" + std::to_string(n)] = p;
    ++used_orders;
    if (p == 0.0) {
      zero_precision = true;
    } else {
      log_precision += std::log(p);
    }
  }
  const double bp =
      hyp_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len))
          : 1.0;
  score.details["brevity_penalty"] = bp;
  score.details["length_ratio"] = hyp_len > 0
                                      ? static_cast<double>(ref_len) /
                                            static_cast<double>(hyp_len)
                                      : 0.0;
  if (used_orders == 0 || zero_precision) {
    score.value = 0.0;
  } else {
    score.value =
        bp * std::exp(log_precision / static_cast<double>(used_orders));
  }
  return score;
}

MetricScore chrf(const std::string& hyp, const std::string& ref,
                 std::size_t max_n, double beta) {
  if (max_n == 0) throw ValueError("chrf: max_n must be >= 1");
  double precision_sum = 0.0, recall_sum = 0.0;
  std::size_t used_orders = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto hyp_grams = text::char_ngrams(hyp, n);
    const auto ref_grams = text::char_ngrams(ref, n);
    std::size_t hyp_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [gram, count] : hyp_grams) {
      hyp_total += count;
      const auto it = ref_grams.find(gram);
      if (it != ref_grams.end()) overlap += std::min(count, it->second);
    }
    for (const auto& [gram, count] : ref_grams) ref_total += count;
    if (hyp_total == 0 && ref_total == 0) continue;
    precision_sum += hyp_total > 0 ? static_cast<double>(overlap) /
                                         static_cast<double>(hyp_total)
                                   : 0.0;
    recall_sum += ref_total > 0 ? static_cast<double>(overlap) /
                                      static_cast<double>(ref_total)
                                : 0.0;
    ++used_orders;
  }
  MetricScore score;
  score.name = "chrf";
  if (used_orders == 0) {
    score.details["precision"] = 0.0;
    score.details["recall"] = 0.0;
    score.value = 0.0;
    return score;
  }
  const double p = precision_sum / static_cast<double>(used_orders);
  const double r = recall_sum / static_cast<double>(used_orders);
  score.details["precision"] = p;
  score.details["recall"] = r;
  const double b2 = beta * beta;
  score.value =
      (b2 * p + r) > 0.0 ? (1.0 + b2) * p * r / (b2 * p + r) : 0.0;
  return score;
}

}  // namespace qars
