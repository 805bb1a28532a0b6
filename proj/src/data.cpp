#include "qars/data.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qars/rng.hpp"
#include "qars/text.hpp"

namespace qars {

std::string layout_name(Layout layout) {
  switch (layout) {
    case Layout::nonblind:
      return "nonblind";
    case Layout::blind:
      return "blind";
    case Layout::reference_free:
      return "reference-free";
  }
  return "?";
}

Layout layout_from_string(const std::string& s) {
  if (s == "nonblind") return Layout::nonblind;
  if (s == "blind") return Layout::blind;
  if (s == "reference-free" || s == "reference_free")
    return Layout::reference_free;
  throw ValueError("unknown layout: " + s);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

namespace {

std::size_t columns_for(Layout layout) {
  switch (layout) {
    case Layout::nonblind:
      return 3;
    case Layout::blind:
      return 1;
    case Layout::reference_free:
      return 2;
  }
  return 0;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

bool all_whitespace(const std::string& s) {
  return text::tokenize_ws(s).tokens.empty();
}

QEInput parse_input_line(const std::string& line, Layout layout,
                         std::size_t line_no) {
  const auto fields = split_tabs(line);
  const std::size_t want = columns_for(layout);
  if (fields.size() != want) {
    throw FormatError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(want) + " column(s) for " +
                      layout_name(layout) + " layout, got " +
                      std::to_string(fields.size()));
  }
  QEInput input;
  switch (layout) {
    case Layout::nonblind:
      input.source = fields[0];
      input.hypothesis = fields[1];
      input.reference = fields[2];
      break;
    case Layout::blind:
      input.hypothesis = fields[0];
      break;
    case Layout::reference_free:
      input.source = fields[0];
      input.hypothesis = fields[1];
      break;
  }
  if (all_whitespace(input.hypothesis)) {
    throw FormatError("line " + std::to_string(line_no) +
                      ": empty hypothesis");
  }
  return input;
}

double parse_score(const std::string& line, std::size_t line_no) {
  const char* begin = line.data();
  const char* end = begin + line.size();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw FormatError("line " + std::to_string(line_no) +
                      ": unparsable score '" + line + "'");
  }
  if (!(value >= 1.0 && value <= 5.0)) {
    throw ValueError("line " + std::to_string(line_no) + ": score " + line +
                     " outside the Likert range [1, 5]");
  }
  return value;
}

}  // namespace

std::vector<QEInput> load_inputs(const std::filesystem::path& in_path,
                                 Layout layout) {
  const auto lines = read_lines(in_path);
  std::vector<QEInput> inputs;
  inputs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    inputs.push_back(parse_input_line(lines[i], layout, i + 1));
  }
  return inputs;
}

Layout detect_layout(const std::filesystem::path& in_path) {
  const auto lines = read_lines(in_path);
  if (lines.empty()) throw FormatError(in_path.string() + ": empty file");
  const std::size_t cols = split_tabs(lines[0]).size();
  Layout layout;
  switch (cols) {
    case 1:
      layout = Layout::blind;
      break;
    case 2:
      layout = Layout::reference_free;
      break;
    case 3:
      layout = Layout::nonblind;
      break;
    default:
      throw FormatError(in_path.string() + ": line 1 has " +
                        std::to_string(cols) + " columns, expected 1-3");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (split_tabs(lines[i]).size() != cols) {
      throw FormatError(in_path.string() + ": line " + std::to_string(i + 1) +
                        " has a different column count than line 1");
    }
  }
  return layout;
}

std::vector<QERecord> load_dataset(const std::filesystem::path& in_path,
                                   const std::filesystem::path& expected_path,
                                   Layout layout) {
  const auto in_lines = read_lines(in_path);
  const auto score_lines = read_lines(expected_path);
  if (in_lines.size() != score_lines.size()) {
    throw FormatError("line-count mismatch: " + in_path.string() + " has " +
                      std::to_string(in_lines.size()) + ", " +
                      expected_path.string() + " has " +
                      std::to_string(score_lines.size()));
  }
  std::vector<QERecord> records;
  records.reserve(in_lines.size());
  for (std::size_t i = 0; i < in_lines.size(); ++i) {
    QEInput input = parse_input_line(in_lines[i], layout, i + 1);
    QERecord record;
    record.source = std::move(input.source);
    record.hypothesis = std::move(input.hypothesis);
    record.reference = std::move(input.reference);
    record.score = parse_score(score_lines[i], i + 1);
    records.push_back(std::move(record));
  }
  return records;
}

namespace {

std::string format_score(double v) { return fmt::format("{}", v); }

}  // namespace

void write_dataset(const std::vector<QERecord>& records,
                   const std::filesystem::path& in_path,
                   const std::filesystem::path& expected_path, Layout layout) {
  std::ofstream in_out(in_path, std::ios::binary);
  if (!in_out) throw FormatError("cannot write " + in_path.string());
  std::ofstream score_out(expected_path, std::ios::binary);
  if (!score_out) throw FormatError("cannot write " + expected_path.string());
  for (const auto& record : records) {
    switch (layout) {
      case Layout::nonblind:
        if (!record.source || !record.reference) {
          throw ValueError("write_dataset: nonblind layout needs source and "
                           "reference fields");
        }
        in_out << *record.source << '\t' << record.hypothesis << '\t'
               << *record.reference << '\n';
        break;
      case Layout::blind:
        in_out << record.hypothesis << '\n';
        break;
      case Layout::reference_free:
        if (!record.source) {
          throw ValueError(
              "write_dataset: reference-free layout needs a source field");
        }
        in_out << *record.source << '\t' << record.hypothesis << '\n';
        break;
    }
    score_out << format_score(record.score) << '\n';
  }
}

std::vector<double> average_annotators(
    const std::vector<std::vector<int>>& rows) {
  std::vector<double> means;
  means.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.empty()) {
      throw ValueError("average_annotators: row " + std::to_string(r + 1) +
                       " is empty");
    }
    long long total = 0;
    for (int s : row) {
      if (s < 1 || s > 5) {
        throw ValueError("average_annotators: row " + std::to_string(r + 1) +
                         " has score " + std::to_string(s) +
                         " outside {1..5}");
      }
      total += s;
    }
    means.push_back(static_cast<double>(total) /
                    static_cast<double>(row.size()));
  }
  return means;
}

DatasetStats dataset_stats(const std::vector<QERecord>& records) {
  if (records.empty()) throw ValueError("dataset_stats: empty record list");
  DatasetStats stats;
  stats.segments = records.size();
  std::size_t hyp_tokens = 0;
  std::size_t source_tokens = 0;
  bool have_sources = true;
  double score_sum = 0.0;
  double score_min = records.front().score;
  for (const auto& record : records) {
    hyp_tokens += text::tokenize_ws(record.hypothesis).tokens.size();
    if (record.source) {
      source_tokens += text::tokenize_ws(*record.source).tokens.size();
    } else {
      have_sources = false;
    }
    score_sum += record.score;
    score_min = std::min(score_min, record.score);
  }
  const double n = static_cast<double>(records.size());
  stats.avg_hyp_tokens = static_cast<double>(hyp_tokens) / n;
  if (have_sources) {
    stats.avg_source_tokens = static_cast<double>(source_tokens) / n;
  }
  stats.min_score = score_min;
  stats.avg_score = score_sum / n;
  return stats;
}

std::vector<std::size_t> sample_dev_indices(std::size_t n, std::uint64_t seed,
                                            std::size_t dev_size) {
  if (dev_size >= n) {
    throw ValueError("split: dev size " + std::to_string(dev_size) +
                     " must be smaller than the dataset (" +
                     std::to_string(n) + ")");
  }
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(seed, /*stream=*/2);
  rng.shuffle(indices);
  std::vector<std::size_t> dev(indices.begin(),
                               indices.begin() + static_cast<long>(dev_size));
  std::sort(dev.begin(), dev.end());
  return dev;
}

std::pair<std::vector<QERecord>, std::vector<QERecord>> split_dev(
    const std::vector<QERecord>& records, std::uint64_t seed,
    std::size_t dev_size) {
  const auto dev_indices = sample_dev_indices(records.size(), seed, dev_size);
  std::vector<QERecord> train, dev;
  train.reserve(records.size() - dev_indices.size());
  dev.reserve(dev_indices.size());
  std::size_t next_dev = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (next_dev < dev_indices.size() && dev_indices[next_dev] == i) {
      dev.push_back(records[i]);
      ++next_dev;
    } else {
      train.push_back(records[i]);
    }
  }
  return {std::move(train), std::move(dev)};
}

std::vector<QERecord> merge_backtranslation(
    const std::vector<QERecord>& blind_records,
    const std::vector<std::string>& bt_sources,
    const std::vector<QERecord>& nonblind_records) {
  if (bt_sources.size() != blind_records.size()) {
    throw ValueError("merge-bt: " + std::to_string(bt_sources.size()) +
                     " back-translated lines vs " +
                     std::to_string(blind_records.size()) + " blind records");
  }
  std::vector<QERecord> merged;
  merged.reserve(nonblind_records.size() + blind_records.size());
  for (const auto& record : nonblind_records) {
    QERecord view = record;
    view.reference = std::nullopt;  // reference-free training view
    merged.push_back(std::move(view));
  }
  for (std::size_t i = 0; i < blind_records.size(); ++i) {
    if (all_whitespace(bt_sources[i])) {
      throw ValueError("merge-bt: back-translation line " +
                       std::to_string(i + 1) + " is empty");
    }
    QERecord augmented = blind_records[i];
    augmented.source = bt_sources[i];
    augmented.reference = std::nullopt;
    merged.push_back(std::move(augmented));
  }
  return merged;
}

std::vector<QERecord> merge_backtranslation(
    const std::vector<QERecord>& blind_records,
    const std::filesystem::path& bt_sources_path,
    const std::vector<QERecord>& nonblind_records) {
  return merge_backtranslation(blind_records, read_lines(bt_sources_path),
                               nonblind_records);
}

}  // namespace qars
