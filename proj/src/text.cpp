#include "qars/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace qars::text {

bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x0009:
    case 0x000A:
    case 0x000B:
    case 0x000C:
    case 0x000D:
    case 0x0020:
    case 0x0085:
    case 0x00A0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

namespace {

// Decodes one code point starting at s[i]; advances i past it. Invalid
// sequences decode byte-by-byte so no input can fail.
char32_t decode_utf8(const std::string& s, std::size_t& i) {
  const auto byte = [&](std::size_t k) {
    return static_cast<unsigned char>(s[k]);
  };
  const unsigned char b0 = byte(i);
  std::size_t len = 0;
  char32_t cp = 0;
  if (b0 < 0x80) {
    ++i;
    return b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return b0;
  }
  if (i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    if ((byte(i + k) & 0xC0) != 0x80) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (byte(i + k) & 0x3F);
  }
  i += len;
  return cp;
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t start = i;
    decode_utf8(s, i);
    chars.push_back(s.substr(start, i - start));
  }
  return chars;
}

TokenSeq tokenize_ws(const std::string& s) {
  TokenSeq seq;
  seq.source_text = s;
  std::string current;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t start = i;
    const char32_t cp = decode_utf8(s, i);
    if (is_unicode_space(cp)) {
      if (!current.empty()) {
        seq.tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.append(s, start, i - start);
    }
  }
  if (!current.empty()) seq.tokens.push_back(std::move(current));
  return seq;
}

std::unordered_map<std::string, std::size_t> char_ngrams(const std::string& s,
                                                         std::size_t n) {
  if (n == 0) throw ValueError("char_ngrams: order must be >= 1");
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t start = i;
    const char32_t cp = decode_utf8(s, i);
    if (!is_unicode_space(cp)) chars.push_back(s.substr(start, i - start));
  }
  std::unordered_map<std::string, std::size_t> grams;
  if (chars.size() < n) return grams;
  for (std::size_t j = 0; j + n <= chars.size(); ++j) {
    std::string gram;
    for (std::size_t k = 0; k < n; ++k) gram += chars[j + k];
    ++grams[gram];
  }
  return grams;
}

Vocab Vocab::build(const std::vector<TokenSeq>& corpus, std::size_t min_freq) {
  if (min_freq == 0) throw ValueError("build_vocab: min_freq must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& seq : corpus) {
    for (const auto& tok : seq.tokens) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, count] : freq) {
    if (count >= min_freq) kept.emplace_back(tok, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  v.id_to_token_.reserve(kept.size());
  for (auto& [tok, count] : kept) {
    v.token_to_id_.emplace(tok, kReserved + v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

std::uint32_t Vocab::lookup(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::uint32_t id) const {
  static const std::string reserved[kReserved] = {"<pad>", "<unk>", "<bos>",
                                                  "<eos>"};
  if (id < kReserved) return reserved[id];
  const std::size_t idx = id - kReserved;
  if (idx >= id_to_token_.size()) {
    throw ValueError("vocab: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[idx];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("vocab: cannot write " + path.string());
  for (const auto& tok : id_to_token_) out << tok << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("vocab: cannot read " + path.string());
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.token_to_id_.emplace(line, kReserved + v.id_to_token_.size());
    v.id_to_token_.push_back(line);
  }
  return v;
}

std::vector<std::uint32_t> encode_ids(const TokenSeq& seq, const Vocab& vocab,
                                      bool add_bos_eos) {
  std::vector<std::uint32_t> ids;
  ids.reserve(seq.tokens.size() + (add_bos_eos ? 2 : 0));
  if (add_bos_eos) ids.push_back(Vocab::kBos);
  for (const auto& tok : seq.tokens) ids.push_back(vocab.lookup(tok));
  if (add_bos_eos) ids.push_back(Vocab::kEos);
  return ids;
}

}  // namespace qars::text
