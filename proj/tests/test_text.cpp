#include <doctest.h>

#include <algorithm>

#include "qars/text.hpp"
#include "support/test_util.hpp"

using namespace qars;
using namespace qars::text;

TEST_CASE("tokenize_ws hand cases") {
  CHECK(tokenize_ws("Ala ma kota").tokens ==
        std::vector<std::string>{"Ala", "ma", "kota"});
  CHECK(tokenize_ws("  a\t b ").tokens == std::vector<std::string>{"a", "b"});
  CHECK(tokenize_ws("").tokens.empty());
}

TEST_CASE("tokenize_ws splits on non-ASCII whitespace") {
  // U+00A0 no-break space and U+3000 ideographic space.
  CHECK(tokenize_ws("a\xc2\xa0z").tokens ==
        std::vector<std::string>{"a", "z"});
  CHECK(tokenize_ws("ko\xc5\x84\xe3\x80\x80tak").tokens ==
        std::vector<std::string>{"ko\xc5\x84", "tak"});
}

TEST_CASE("tokenize_ws join round-trip on single-spaced text") {
  const std::string s = "jeden dwa trzy cztery";
  const auto seq = tokenize_ws(s);
  std::string joined;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i > 0) joined += ' ';
    joined += seq.tokens[i];
  }
  CHECK(joined == s);
}

TEST_CASE("char_ngrams hand cases") {
  const auto bigrams = char_ngrams("abc", 2);
  CHECK(bigrams.size() == 2);
  CHECK(bigrams.at("ab") == 1);
  CHECK(bigrams.at("bc") == 1);

  const auto repeated = char_ngrams("aaa", 2);
  CHECK(repeated.size() == 1);
  CHECK(repeated.at("aa") == 2);

  // Whitespace is stripped before n-gram extraction.
  const auto stripped = char_ngrams("a b", 2);
  CHECK(stripped.size() == 1);
  CHECK(stripped.at("ab") == 1);
}

TEST_CASE("char_ngrams edge cases") {
  CHECK(char_ngrams("ab", 3).empty());
  CHECK(char_ngrams("", 1).empty());
  CHECK_THROWS_AS(char_ngrams("abc", 0), ValueError);
  // Multi-byte code points count as single characters.
  const auto polish = char_ngrams("\xc5\xbc\xc3\xb3\xc5\x82w", 2);  // "żółw"
  CHECK(polish.size() == 3);
  CHECK(polish.count("\xc5\xbc\xc3\xb3") == 1);  // "żó"
}

TEST_CASE("build_vocab orders by frequency then lexicographic") {
  const std::vector<TokenSeq> corpus{tokenize_ws("a b a")};
  const auto v = Vocab::build(corpus, 1);
  CHECK(v.lookup("a") == 4);
  CHECK(v.lookup("b") == 5);
  CHECK(v.size() == 6);
}

TEST_CASE("build_vocab applies the frequency threshold") {
  const std::vector<TokenSeq> corpus{tokenize_ws("a b a")};
  const auto v = Vocab::build(corpus, 2);
  CHECK(v.lookup("a") == 4);
  CHECK(v.lookup("b") == Vocab::kUnk);
  CHECK(v.size() == 5);
}

TEST_CASE("build_vocab on an empty corpus keeps only reserved ids") {
  const auto v = Vocab::build({}, 1);
  CHECK(v.size() == 4);
  CHECK(v.lookup("anything") == Vocab::kUnk);
}

TEST_CASE("vocab is deterministic under input reordering") {
  const std::vector<TokenSeq> corpus_a{tokenize_ws("pies kot dom"),
                                       tokenize_ws("kot dom pies")};
  const std::vector<TokenSeq> corpus_b{tokenize_ws("dom pies kot"),
                                       tokenize_ws("pies dom kot")};
  const auto va = Vocab::build(corpus_a, 1);
  const auto vb = Vocab::build(corpus_b, 1);
  for (const std::string tok : {"pies", "kot", "dom"}) {
    CHECK(va.lookup(tok) == vb.lookup(tok));
  }
  // Equal frequencies everywhere, so ids follow lexicographic order.
  CHECK(va.lookup("dom") == 4);
  CHECK(va.lookup("kot") == 5);
  CHECK(va.lookup("pies") == 6);
}

TEST_CASE("encode_ids with wrapping, UNK fallback and empty input") {
  const auto v = Vocab::build({tokenize_ws("a")}, 1);
  CHECK(encode_ids(tokenize_ws("a"), v, true) ==
        std::vector<std::uint32_t>{2, 4, 3});
  CHECK(encode_ids(tokenize_ws("zzz"), v, false) ==
        std::vector<std::uint32_t>{1});
  CHECK(encode_ids(tokenize_ws(""), v, true) ==
        std::vector<std::uint32_t>{2, 3});
}

TEST_CASE("vocab file round-trip: line number + 4 = id") {
  qars::testing::TempDir tmp("vocab");
  const auto v =
      Vocab::build({tokenize_ws("kot pies kot dom kot pies")}, 1);
  v.save(tmp.file("vocab.txt"));
  const auto loaded = Vocab::load(tmp.file("vocab.txt"));
  CHECK(loaded.size() == v.size());
  for (const std::string tok : {"kot", "pies", "dom"}) {
    CHECK(loaded.lookup(tok) == v.lookup(tok));
  }
  const auto content = qars::testing::read_text(tmp.file("vocab.txt"));
  CHECK(content == "kot\npies\ndom\n");  // frequencies 3, 2, 1
}
