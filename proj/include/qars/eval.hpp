// eval.hpp -- correlation computation and results tables.
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qars/common.hpp"

namespace qars {

// Pearson's r in [-1, 1]. Throws ValueError on length mismatch, fewer than
// two points, or zero variance in either argument.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Spearman's rho: pearson over average ranks (ties share the mean rank).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ReportRow {
  std::string name;
  std::optional<double> r_times_100;  // nullopt renders as n/a
};

struct MetricReport {
  std::vector<ReportRow> rows;
  std::optional<std::size_t> best_index;  // highest r; ties -> first listed
};

struct NamedPredictions {
  std::string name;
  std::vector<double> predictions;
  std::vector<double> gold;
};

// Pearson per method, scaled x100. Rows whose correlation is undefined are
// kept with an empty value and excluded from the best flag.
MetricReport report(const std::vector<NamedPredictions>& results);

// Fixed-width table; the best row's value carries a '*' marker.
void render_report(const MetricReport& rep, std::ostream& out);
// name TAB r_times_100 (2 decimals), n/a for undefined rows.
void write_report_tsv(const MetricReport& rep,
                      const std::filesystem::path& path);

}  // namespace qars
