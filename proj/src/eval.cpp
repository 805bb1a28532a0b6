#include "qars/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace qars {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw ValueError("pearson: length mismatch, " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw ValueError("pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    cov += dx * dy;
    var_x += dx * dx;
    var_y += dy * dy;
  }
  if (var_x == 0.0 || var_y == 0.0) {
    throw ValueError("pearson: zero variance, correlation undefined");
  }
  return cov / std::sqrt(var_x * var_y);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    // Ranks are 1-based; a tie block gets the mean of its ranks.
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw ValueError("spearman: length mismatch, " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw ValueError("spearman: need at least 2 points");
  return pearson(average_ranks(x), average_ranks(y));
}

MetricReport report(const std::vector<NamedPredictions>& results) {
  MetricReport rep;
  for (const auto& entry : results) {
    ReportRow row;
    row.name = entry.name;
    try {
      row.r_times_100 = pearson(entry.predictions, entry.gold) * 100.0;
    } catch (const ValueError&) {
      row.r_times_100 = std::nullopt;
    }
    rep.rows.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    if (!rep.rows[i].r_times_100) continue;
    if (!rep.best_index ||
        *rep.rows[i].r_times_100 > *rep.rows[*rep.best_index].r_times_100) {
      rep.best_index = i;
    }
  }
  return rep;
}

namespace {

std::string format_r(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

}  // namespace

void render_report(const MetricReport& rep, std::ostream& out) {
  std::size_t name_width = std::string("Method").size();
  for (const auto& row : rep.rows)
    name_width = std::max(name_width, row.name.size());
  out << std::left << std::setw(static_cast<int>(name_width) + 2) << "Method"
      << "Pearson's r\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& row = rep.rows[i];
    std::string value = row.r_times_100 ? format_r(*row.r_times_100) : "n/a";
    if (rep.best_index && *rep.best_index == i) value = "*" + value;
    out << std::left << std::setw(static_cast<int>(name_width) + 2)
        << row.name << value << '\n';
  }
}

void write_report_tsv(const MetricReport& rep,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("report: cannot write " + path.string());
  for (const auto& row : rep.rows) {
    out << row.name << '\t'
        << (row.r_times_100 ? format_r(*row.r_times_100) : "n/a") << '\n';
  }
}

}  // namespace qars
