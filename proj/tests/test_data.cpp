#include <doctest.h>

#include <algorithm>
#include <set>

#include "qars/data.hpp"
#include "support/test_util.hpp"

using namespace qars;
using qars::testing::TempDir;
using qars::testing::read_text;
using qars::testing::write_text;

TEST_CASE("load_dataset nonblind and blind layouts") {
  TempDir tmp("load");
  write_text(tmp.file("in.tsv"), "Hello\tCze\xc5\x9b\xc4\x87\tWitaj\n");
  write_text(tmp.file("expected.tsv"), "4.5\n");
  const auto records =
      load_dataset(tmp.file("in.tsv"), tmp.file("expected.tsv"),
                   Layout::nonblind);
  REQUIRE(records.size() == 1);
  CHECK(records[0].source == "Hello");
  CHECK(records[0].hypothesis == "Cze\xc5\x9b\xc4\x87");
  CHECK(records[0].reference == "Witaj");
  CHECK(records[0].score == 4.5);

  write_text(tmp.file("blind.tsv"), "Cze\xc5\x9b\xc4\x87\n");
  write_text(tmp.file("blind_expected.tsv"), "3.0\n");
  const auto blind = load_dataset(tmp.file("blind.tsv"),
                                  tmp.file("blind_expected.tsv"), Layout::blind);
  REQUIRE(blind.size() == 1);
  CHECK_FALSE(blind[0].source.has_value());
  CHECK_FALSE(blind[0].reference.has_value());
  CHECK(blind[0].score == 3.0);
}

TEST_CASE("load_dataset errors carry line numbers") {
  TempDir tmp("errors");
  write_text(tmp.file("in.tsv"), "a\tb\tc\nd\te\n");
  write_text(tmp.file("expected.tsv"), "3.0\n3.0\n");
  CHECK_THROWS_WITH_AS(
      load_dataset(tmp.file("in.tsv"), tmp.file("expected.tsv"),
                   Layout::nonblind),
      doctest::Contains("line 2"), FormatError);

  write_text(tmp.file("in2.tsv"), "a\tb\tc\n");
  write_text(tmp.file("oob.tsv"), "5.5\n");
  CHECK_THROWS_WITH_AS(load_dataset(tmp.file("in2.tsv"), tmp.file("oob.tsv"),
                                    Layout::nonblind),
                       doctest::Contains("Likert"), ValueError);

  write_text(tmp.file("bad.tsv"), "x\n");
  CHECK_THROWS_AS(load_dataset(tmp.file("in2.tsv"), tmp.file("bad.tsv"),
                               Layout::nonblind),
                  FormatError);

  write_text(tmp.file("short.tsv"), "3.0\n3.0\n");
  CHECK_THROWS_WITH_AS(load_dataset(tmp.file("in2.tsv"), tmp.file("short.tsv"),
                                    Layout::nonblind),
                       doctest::Contains("line-count mismatch"), FormatError);

  write_text(tmp.file("empty_hyp.tsv"), "a\t \tc\n");
  CHECK_THROWS_WITH_AS(
      load_dataset(tmp.file("empty_hyp.tsv"), tmp.file("in2_scores.tsv"),
                   Layout::nonblind),
      doctest::Contains("cannot read"), FormatError);
  write_text(tmp.file("in2_scores.tsv"), "3.0\n");
  CHECK_THROWS_WITH_AS(
      load_dataset(tmp.file("empty_hyp.tsv"), tmp.file("in2_scores.tsv"),
                   Layout::nonblind),
      doctest::Contains("empty hypothesis"), FormatError);
}

TEST_CASE("likert bounds rejected on fuzzed out-of-range scores") {
  TempDir tmp("fuzz");
  Rng rng(12);
  write_text(tmp.file("in.tsv"), "hyp\n");
  for (int round = 0; round < 50; ++round) {
    double v = rng.uniform(-10.0, 10.0);
    if (v >= 1.0 && v <= 5.0) v += v > 0 ? 10.0 : -10.0;
    write_text(tmp.file("score.tsv"), std::to_string(v) + "\n");
    CHECK_THROWS_AS(load_dataset(tmp.file("in.tsv"), tmp.file("score.tsv"),
                                 Layout::blind),
                    ValueError);
  }
}

TEST_CASE("write/load round-trip preserves bytes") {
  TempDir tmp("roundtrip");
  // Scores written in shortest-repr form; one trailing newline.
  const std::string in_text =
      "src one\thyp one\tref one\nsrc two\thyp two\tref two\n";
  const std::string score_text = "4.5\n3.25\n";
  write_text(tmp.file("in.tsv"), in_text);
  write_text(tmp.file("expected.tsv"), score_text);
  const auto records = load_dataset(tmp.file("in.tsv"),
                                    tmp.file("expected.tsv"), Layout::nonblind);
  write_dataset(records, tmp.file("in2.tsv"), tmp.file("expected2.tsv"),
                Layout::nonblind);
  CHECK(read_text(tmp.file("in2.tsv")) == in_text);
  CHECK(read_text(tmp.file("expected2.tsv")) == score_text);
}

TEST_CASE("write/load round-trip normalizes a missing trailing newline") {
  TempDir tmp("newline");
  write_text(tmp.file("in.tsv"), "hyp only");  // no trailing newline
  write_text(tmp.file("expected.tsv"), "2.5");
  const auto records =
      load_dataset(tmp.file("in.tsv"), tmp.file("expected.tsv"), Layout::blind);
  write_dataset(records, tmp.file("in2.tsv"), tmp.file("expected2.tsv"),
                Layout::blind);
  CHECK(read_text(tmp.file("in2.tsv")) == "hyp only\n");
  CHECK(read_text(tmp.file("expected2.tsv")) == "2.5\n");
}

TEST_CASE("average_annotators hand cases") {
  CHECK(average_annotators({{4, 4, 4, 4, 4, 4}}) ==
        std::vector<double>{4.0});
  const auto means = average_annotators({{5, 5, 4, 4, 4, 4}});
  CHECK(means[0] == doctest::Approx(4.0 + 1.0 / 3.0).epsilon(1e-15));
  // Non-integer means are the norm, eg. a six-annotator 2.58-style minimum.
  CHECK(average_annotators({{3, 3, 3, 2, 3, 2}})[0] ==
        doctest::Approx(16.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("average_annotators error cases") {
  CHECK_THROWS_AS(average_annotators({{1, 2, 6}}), ValueError);
  CHECK_THROWS_AS(average_annotators({{0, 2, 3}}), ValueError);
  CHECK_THROWS_AS(average_annotators({{}}), ValueError);
}

TEST_CASE("dataset_stats hand fixture") {
  std::vector<QERecord> records;
  records.push_back({std::nullopt, "a b", std::nullopt, 3.0});
  records.push_back({std::nullopt, "a b c d", std::nullopt, 5.0});
  const auto stats = dataset_stats(records);
  CHECK(stats.segments == 2);
  CHECK_FALSE(stats.avg_source_tokens.has_value());
  CHECK(stats.avg_hyp_tokens == 3.0);
  CHECK(stats.min_score == 3.0);
  CHECK(stats.avg_score == 4.0);
}

TEST_CASE("dataset_stats single record and source averaging") {
  std::vector<QERecord> records;
  records.push_back({"one two three", "a b", "r", 4.25});
  const auto stats = dataset_stats(records);
  CHECK(stats.segments == 1);
  CHECK(stats.avg_source_tokens == 3.0);
  CHECK(stats.avg_hyp_tokens == 2.0);
  CHECK(stats.min_score == 4.25);
  CHECK(stats.avg_score == 4.25);
  CHECK_THROWS_AS(dataset_stats({}), ValueError);
}

namespace {

std::vector<QERecord> numbered_records(std::size_t n) {
  std::vector<QERecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back({std::nullopt, "hyp " + std::to_string(i), std::nullopt,
                       1.0 + static_cast<double>(i % 5)});
  }
  return records;
}

}  // namespace

TEST_CASE("split_dev partitions disjointly and deterministically") {
  const auto records = numbered_records(250);
  const auto [train, dev] = split_dev(records, 42, 100);
  CHECK(train.size() == 150);
  CHECK(dev.size() == 100);

  std::multiset<std::string> all_in, all_out;
  for (const auto& r : records) all_in.insert(r.hypothesis);
  for (const auto& r : train) all_out.insert(r.hypothesis);
  for (const auto& r : dev) all_out.insert(r.hypothesis);
  CHECK(all_in == all_out);

  std::set<std::string> train_set, dev_set;
  for (const auto& r : train) train_set.insert(r.hypothesis);
  for (const auto& r : dev) dev_set.insert(r.hypothesis);
  std::vector<std::string> overlap;
  std::set_intersection(train_set.begin(), train_set.end(), dev_set.begin(),
                        dev_set.end(), std::back_inserter(overlap));
  CHECK(overlap.empty());

  const auto [train2, dev2] = split_dev(records, 42, 100);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    CHECK(dev[i].hypothesis == dev2[i].hypothesis);
  }
  const auto [train3, dev3] = split_dev(records, 43, 100);
  bool any_difference = false;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    any_difference = any_difference || dev[i].hypothesis != dev3[i].hypothesis;
  }
  CHECK(any_difference);
}

TEST_CASE("split_dev edge cases") {
  const auto records = numbered_records(10);
  const auto [train, dev] = split_dev(records, 1, 0);
  CHECK(train.size() == 10);
  CHECK(dev.empty());
  CHECK_THROWS_AS(split_dev(records, 1, 10), ValueError);
  CHECK_THROWS_AS(split_dev(records, 1, 11), ValueError);
}

TEST_CASE("merge_backtranslation wires fields and keeps order") {
  std::vector<QERecord> blind;
  blind.push_back({std::nullopt, "Kot siedzi.", std::nullopt, 4.0});
  std::vector<QERecord> nonblind;
  nonblind.push_back({"The dog runs.", "Pies biegnie.", "Pies biega.", 4.5});

  const auto merged =
      merge_backtranslation(blind, std::vector<std::string>{"The cat is sitting."}, nonblind);
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].source == "The dog runs.");
  CHECK(merged[0].hypothesis == "Pies biegnie.");
  CHECK_FALSE(merged[0].reference.has_value());  // reference-free view
  CHECK(merged[0].score == 4.5);
  CHECK(merged[1].source == "The cat is sitting.");
  CHECK(merged[1].hypothesis == "Kot siedzi.");
  CHECK_FALSE(merged[1].reference.has_value());
  CHECK(merged[1].score == 4.0);
}

TEST_CASE("merge_backtranslation count checks mirror the task scale") {
  const auto blind = numbered_records(1985);
  auto nonblind = numbered_records(1985);
  for (auto& r : nonblind) {
    r.source = "src";
    r.reference = "ref";
  }
  std::vector<std::string> bt(1985, "back translated");
  CHECK(merge_backtranslation(blind, bt, nonblind).size() == 3970);

  bt.pop_back();
  CHECK_THROWS_WITH_AS(merge_backtranslation(blind, bt, nonblind),
                       doctest::Contains("1984"), ValueError);
  CHECK_THROWS_WITH_AS(merge_backtranslation(blind, bt, nonblind),
                       doctest::Contains("1985"), ValueError);
}

TEST_CASE("merge_backtranslation rejects empty back-translations") {
  const auto blind = numbered_records(1);
  CHECK_THROWS_WITH_AS(merge_backtranslation(blind, std::vector<std::string>{"   "}, {}),
                       doctest::Contains("line 1"), ValueError);
}

TEST_CASE("detect_layout by column count") {
  TempDir tmp("detect");
  write_text(tmp.file("one.tsv"), "hyp\nhyp2\n");
  CHECK(detect_layout(tmp.file("one.tsv")) == Layout::blind);
  write_text(tmp.file("two.tsv"), "s\th\n");
  CHECK(detect_layout(tmp.file("two.tsv")) == Layout::reference_free);
  write_text(tmp.file("three.tsv"), "s\th\tr\n");
  CHECK(detect_layout(tmp.file("three.tsv")) == Layout::nonblind);
  write_text(tmp.file("ragged.tsv"), "s\th\tr\ns\th\n");
  CHECK_THROWS_WITH_AS(detect_layout(tmp.file("ragged.tsv")),
                       doctest::Contains("line 2"), FormatError);
}
