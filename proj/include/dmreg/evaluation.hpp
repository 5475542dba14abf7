#ifndef DMREG_EVALUATION_HPP
#define DMREG_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/transform.hpp"

namespace dmreg {

/// One registration outcome to be scored.
struct EvalRecord {
  std::string method;
  int pair_id = 0;
  RigidParams truth;
  RigidParams estimate;
};

inline constexpr int kErrorColumns = 7;
inline constexpr std::array<const char*, kErrorColumns> kErrorColumnNames = {
    "norm_T_mm", "abs_dtx_mm", "abs_dty_mm", "abs_dtz_mm", "abs_drx_deg", "abs_dry_deg", "abs_drz_deg"};

/// ||dt||, |dtx|, |dty|, |dtz|, |drx|, |dry|, |drz| (degrees).
inline std::array<double, kErrorColumns> error_columns(const ErrorRecord& e) {
  return {e.norm_t,          std::abs(e.dt.x),     std::abs(e.dt.y),     std::abs(e.dt.z),
          std::abs(e.dr_deg.x), std::abs(e.dr_deg.y), std::abs(e.dr_deg.z)};
}

struct ColumnStat {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single record
};

struct MethodRow {
  std::string method;
  std::array<ColumnStat, kErrorColumns> stats{};
  std::vector<int> pair_ids;
  std::vector<ErrorRecord> records;
};

struct PValue {
  std::string method_a;
  std::string method_b;
  int column = 0;
  double p = 1.0;
};

struct ErrorTable {
  std::vector<MethodRow> rows;
  std::vector<PValue> pvalues;
  std::string pvalue_error;  ///< set when p-values could not be computed
};

inline ColumnStat column_stat(std::span<const double> xs) {
  ColumnStat s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// Two-sided Wilcoxon signed-rank test on paired samples, normal
/// approximation with tie correction and no continuity correction. Zero
/// differences are dropped; if none remain the p-value is 1.
inline double wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon_signed_rank: sample sizes differ");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (diff != 0.0) d.push_back(diff);
  }
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w_plus += rank[i];
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = (w_plus - mean) / std::sqrt(var);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

/// Per-method p-values for every column; methods must cover the same pair ids.
inline std::vector<PValue> pairwise_pvalues(const std::vector<MethodRow>& rows) {
  std::vector<PValue> out;
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      std::map<int, std::size_t> pos_b;
      for (std::size_t i = 0; i < rows[b].pair_ids.size(); ++i) pos_b[rows[b].pair_ids[i]] = i;
      if (pos_b.size() != rows[a].pair_ids.size() || rows[a].pair_ids.size() != rows[b].pair_ids.size()) {
        throw std::invalid_argument("pair ids of '" + rows[a].method + "' and '" + rows[b].method + "' do not match");
      }
      for (int c = 0; c < kErrorColumns; ++c) {
        std::vector<double> xa, xb;
        for (std::size_t i = 0; i < rows[a].pair_ids.size(); ++i) {
          auto it = pos_b.find(rows[a].pair_ids[i]);
          if (it == pos_b.end()) {
            throw std::invalid_argument("pair ids of '" + rows[a].method + "' and '" + rows[b].method +
                                        "' do not match");
          }
          xa.push_back(error_columns(rows[a].records[i])[c]);
          xb.push_back(error_columns(rows[b].records[it->second])[c]);
        }
        out.push_back({rows[a].method, rows[b].method, c, wilcoxon_signed_rank(xa, xb)});
      }
    }
  return out;
}

/// Aggregates records by method (first-appearance order) into mean +- std
/// rows and pairwise significance tests.
inline ErrorTable evaluate_errors(std::span<const EvalRecord> records) {
  ErrorTable table;
  std::map<std::string, std::size_t> row_of;
  for (const auto& r : records) {
    auto it = row_of.find(r.method);
    if (it == row_of.end()) {
      it = row_of.emplace(r.method, table.rows.size()).first;
      table.rows.push_back({});
      table.rows.back().method = r.method;
    }
    MethodRow& row = table.rows[it->second];
    row.pair_ids.push_back(r.pair_id);
    row.records.push_back(transform_error(r.truth, r.estimate));
  }
  for (auto& row : table.rows) {
    for (int c = 0; c < kErrorColumns; ++c) {
      std::vector<double> xs;
      for (const auto& e : row.records) xs.push_back(error_columns(e)[c]);
      row.stats[c] = column_stat(xs);
    }
  }
  try {
    table.pvalues = pairwise_pvalues(table.rows);
  } catch (const std::invalid_argument& e) {
    table.pvalue_error = e.what();
  }
  return table;
}

/// "mean ± std" with two decimals.
inline std::string format_stat(const ColumnStat& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", s.mean, s.std);
  return buf;
}

inline std::string render_row(const std::string& method, const std::array<ColumnStat, kErrorColumns>& stats) {
  std::string line = method;
  for (const auto& s : stats) line += "," + format_stat(s);
  return line + "\n";
}

/// Summary rows, then "# p-values" and "# raw" sections.
inline std::string render_table_csv(const ErrorTable& table) {
  std::string out = "method";
  for (const char* name : kErrorColumnNames) out += std::string(",") + name;
  out += "\n";
  for (const auto& row : table.rows) out += render_row(row.method, row.stats);
  char buf[256];
  out += "# p-values (Wilcoxon signed-rank, two-sided)\n";
  if (!table.pvalue_error.empty()) {
    out += "# unavailable: " + table.pvalue_error + "\n";
  } else {
    for (const auto& p : table.pvalues) {
      std::snprintf(buf, sizeof buf, "# %s,%s,%s,%.6g\n", p.method_a.c_str(), p.method_b.c_str(),
                    kErrorColumnNames[p.column], p.p);
      out += buf;
    }
  }
  out += "# raw: method,pair_id,dtx_mm,dty_mm,dtz_mm,norm_T_mm,drx_deg,dry_deg,drz_deg\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.records.size(); ++i) {
      const ErrorRecord& e = row.records[i];
      std::snprintf(buf, sizeof buf, "# %s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.method.c_str(),
                    row.pair_ids[i], e.dt.x, e.dt.y, e.dt.z, e.norm_t, e.dr_deg.x, e.dr_deg.y, e.dr_deg.z);
      out += buf;
    }
  }
  return out;
}

}  // namespace dmreg

#endif  // DMREG_EVALUATION_HPP
