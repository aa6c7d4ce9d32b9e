// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pie/error.hpp"
#include "pie/panel.hpp"

/// Long-format panel CSV: header `unit,period,y,x1,...,xK`, one row per
/// (unit, period), any row order.
namespace pie::csv {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

[[noreturn]] inline void fail_at(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::InvalidInput, "line " + std::to_string(line) + ": " + msg);
}

}  // namespace detail

inline PanelDataset read_panel(std::istream& in) {
  using detail::fail_at;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) {
      header = detail::split(line);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorCode::InvalidInput, "empty input: expected header unit,period,y,x1..xK");
  if (header.size() < 4 || header[0] != "unit" || header[1] != "period" || header[2] != "y")
    fail_at(lineno, "header must be unit,period,y followed by at least one regressor column");
  const std::size_t K = header.size() - 3;
  for (std::size_t k = 0; k < K; ++k)
    if (header[3 + k].empty()) fail_at(lineno, "empty regressor name in header");

  struct Row {
    std::vector<double> values;  // y, x1..xK
    std::size_t line;
  };
  std::vector<std::string> unit_order;
  std::map<std::string, std::size_t> unit_index;
  std::vector<std::map<std::string, Row>> by_unit;
  std::map<std::string, int> period_seen;

  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    if (cells.size() != header.size())
      fail_at(lineno, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    if (cells[0].empty()) fail_at(lineno, "empty unit identifier");
    if (cells[1].empty()) fail_at(lineno, "empty period label");
    Row row{std::vector<double>(K + 1), lineno};
    for (std::size_t c = 2; c < cells.size(); ++c) {
      if (!detail::parse_double(cells[c], row.values[c - 2]))
        fail_at(lineno, "column '" + header[c] + "': cannot parse '" + cells[c] + "' as a number");
      if (!std::isfinite(row.values[c - 2])) fail_at(lineno, "column '" + header[c] + "': non-finite value");
    }
    auto [it, inserted] = unit_index.try_emplace(cells[0], unit_order.size());
    if (inserted) {
      unit_order.push_back(cells[0]);
      by_unit.emplace_back();
    }
    auto& rows = by_unit[it->second];
    if (auto dup = rows.find(cells[1]); dup != rows.end())
      fail_at(lineno, "duplicate row for unit '" + cells[0] + "', period '" + cells[1] + "' (first at line " +
                          std::to_string(dup->second.line) + ")");
    rows.emplace(cells[1], std::move(row));
    period_seen.try_emplace(cells[1], 0);
  }
  if (unit_order.empty()) throw Error(ErrorCode::InvalidInput, "no data rows");

  std::vector<std::string> periods;
  for (const auto& [p, _] : period_seen) periods.push_back(p);
  bool numeric = true;
  std::vector<double> numeric_value(periods.size());
  for (std::size_t j = 0; j < periods.size(); ++j) numeric = numeric && detail::parse_double(periods[j], numeric_value[j]);
  if (numeric) {
    std::vector<std::size_t> idx(periods.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return numeric_value[a] < numeric_value[b]; });
    std::vector<std::string> sorted;
    for (std::size_t j : idx) sorted.push_back(periods[j]);
    periods = std::move(sorted);
  }

  std::vector<std::string> unbalanced;
  for (std::size_t i = 0; i < unit_order.size(); ++i)
    if (by_unit[i].size() != periods.size()) unbalanced.push_back(unit_order[i]);
  if (!unbalanced.empty()) {
    std::string msg = "unbalanced panel: " + std::to_string(unbalanced.size()) + " unit(s) missing periods (";
    for (std::size_t j = 0; j < unbalanced.size() && j < 10; ++j) msg += (j ? ", " : "") + unbalanced[j];
    if (unbalanced.size() > 10) msg += ", ...";
    msg += "); expected " + std::to_string(periods.size()) + " periods per unit";
    throw Error(ErrorCode::InvalidInput, msg);
  }

  const auto n = static_cast<Eigen::Index>(unit_order.size());
  const auto T = static_cast<Eigen::Index>(periods.size());
  Eigen::MatrixXd y(n, T);
  std::vector<Eigen::MatrixXd> x(K, Eigen::MatrixXd(n, T));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < T; ++t) {
      const Row& r = by_unit[static_cast<std::size_t>(i)].at(periods[static_cast<std::size_t>(t)]);
      y(i, t) = r.values[0];
      for (std::size_t k = 0; k < K; ++k) x[k](i, t) = r.values[k + 1];
    }
  std::vector<std::string> names(header.begin() + 3, header.end());
  return make_panel(std::move(y), std::move(x), std::move(unit_order), std::move(periods), std::move(names));
}

inline PanelDataset read_panel_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open input file '" + path + "'");
  return read_panel(in);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_panel(std::ostream& out, const PanelDataset& panel) {
  panel.validate();
  out << "unit,period,y";
  for (const auto& name : panel.regressor_names) out << ',' << name;
  out << '\n';
  for (Eigen::Index i = 0; i < panel.n(); ++i)
    for (Eigen::Index t = 0; t < panel.T(); ++t) {
      out << panel.unit_ids[static_cast<std::size_t>(i)] << ',' << panel.period_labels[static_cast<std::size_t>(t)]
          << ',' << format_double(panel.y(i, t));
      for (Eigen::Index k = 0; k < panel.K(); ++k) out << ',' << format_double(panel.x[static_cast<std::size_t>(k)](i, t));
      out << '\n';
    }
}

inline void write_panel_file(const std::string& path, const PanelDataset& panel) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidInput, "cannot open output file '" + path + "'");
  write_panel(out, panel);
}

}  // namespace pie::csv
