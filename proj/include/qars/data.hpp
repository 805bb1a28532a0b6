// data.hpp -- dataset I/O, score averaging, statistics, splits, and the
// back-translation merge.
//
// File contracts: in.tsv is UTF-8 with LF line endings and TAB-separated
// columns (nonblind: source TAB hypothesis TAB reference; reference-free:
// source TAB hypothesis; blind: hypothesis). expected.tsv holds one decimal
// score per line, '.' separator. Line counts of the two files must match.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qars/common.hpp"

namespace qars {

struct QEInput {
  std::optional<std::string> source;
  std::string hypothesis;
  std::optional<std::string> reference;
};

struct QERecord {
  std::optional<std::string> source;
  std::string hypothesis;
  std::optional<std::string> reference;
  double score = 0.0;  // in [1, 5]

  QEInput input() const { return {source, hypothesis, reference}; }
};

enum class Layout { nonblind, blind, reference_free };

std::string layout_name(Layout layout);
Layout layout_from_string(const std::string& s);

// Reads the whole file as LF-separated lines; a single trailing newline is
// not an extra empty line. CR before LF is stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::vector<QERecord> load_dataset(const std::filesystem::path& in_path,
                                   const std::filesystem::path& expected_path,
                                   Layout layout);
std::vector<QEInput> load_inputs(const std::filesystem::path& in_path,
                                 Layout layout);
// Layout inferred from the column count of the first line; every other line
// must agree.
Layout detect_layout(const std::filesystem::path& in_path);

void write_dataset(const std::vector<QERecord>& records,
                   const std::filesystem::path& in_path,
                   const std::filesystem::path& expected_path, Layout layout);

// Arithmetic mean per row of integer annotator scores in {1..5}.
std::vector<double> average_annotators(
    const std::vector<std::vector<int>>& rows);

struct DatasetStats {
  std::size_t segments = 0;
  std::optional<double> avg_source_tokens;
  double avg_hyp_tokens = 0.0;
  double min_score = 0.0;
  double avg_score = 0.0;
};

DatasetStats dataset_stats(const std::vector<QERecord>& records);

// Sorted dev indices: a seeded uniform sample without replacement. Shared by
// the record-level split and the CLI's byte-preserving line split.
std::vector<std::size_t> sample_dev_indices(std::size_t n, std::uint64_t seed,
                                            std::size_t dev_size);

std::pair<std::vector<QERecord>, std::vector<QERecord>> split_dev(
    const std::vector<QERecord>& records, std::uint64_t seed,
    std::size_t dev_size = 100);

// Attaches one back-translated source line per blind record, drops
// references from the nonblind records, and concatenates nonblind-first.
std::vector<QERecord> merge_backtranslation(
    const std::vector<QERecord>& blind_records,
    const std::vector<std::string>& bt_sources,
    const std::vector<QERecord>& nonblind_records);
std::vector<QERecord> merge_backtranslation(
    const std::vector<QERecord>& blind_records,
    const std::filesystem::path& bt_sources_path,
    const std::vector<QERecord>& nonblind_records);

}  // namespace qars
