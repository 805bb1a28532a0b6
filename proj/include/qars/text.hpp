// text.hpp -- tokenization and vocabulary handling.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "qars/common.hpp"

namespace qars::text {

struct TokenSeq {
  std::vector<std::string> tokens;
  std::string source_text;
};

// Splits on runs of Unicode whitespace; empty input gives an empty sequence.
TokenSeq tokenize_ws(const std::string& s);

// All contiguous n-grams of the text's code points after removing every
// whitespace character (chrF convention). Keys are the UTF-8 bytes of the
// n code points, values are multiplicities.
std::unordered_map<std::string, std::size_t> char_ngrams(const std::string& s,
                                                         std::size_t n);

// Decodes UTF-8 permissively: an invalid byte stands for itself.
std::vector<std::string> utf8_chars(const std::string& s);
bool is_unicode_space(char32_t cp);

class Vocab {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kUnk = 1;
  static constexpr std::uint32_t kBos = 2;
  static constexpr std::uint32_t kEos = 3;
  static constexpr std::uint32_t kReserved = 4;

  Vocab() = default;

  // Tokens with frequency >= min_freq, ids in descending frequency then
  // lexicographic order.
  static Vocab build(const std::vector<TokenSeq>& corpus,
                     std::size_t min_freq);

  std::uint32_t lookup(const std::string& token) const;
  const std::string& token(std::uint32_t id) const;
  // Total id count including the four reserved symbols.
  std::size_t size() const { return kReserved + id_to_token_.size(); }

  // One non-reserved token per line; line number + 4 = id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, std::uint32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

std::vector<std::uint32_t> encode_ids(const TokenSeq& seq, const Vocab& vocab,
                                      bool add_bos_eos);

}  // namespace qars::text
