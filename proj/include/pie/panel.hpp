// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pie/error.hpp"
#include "pie/linalg.hpp"

namespace pie {

/// Balanced n x T panel with K regressors. Regressor k is stored as its own
/// n x T matrix so that per-period cross sections are contiguous columns.
struct PanelDataset {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;
  std::vector<std::string> unit_ids;
  std::vector<std::string> period_labels;
  std::vector<std::string> regressor_names;

  [[nodiscard]] Eigen::Index n() const { return y.rows(); }
  [[nodiscard]] Eigen::Index T() const { return y.cols(); }
  [[nodiscard]] Eigen::Index K() const { return static_cast<Eigen::Index>(x.size()); }

  /// T x K regressor matrix of unit i.
  [[nodiscard]] Eigen::MatrixXd unit_design(Eigen::Index i) const {
    Eigen::MatrixXd d(T(), K());
    for (Eigen::Index k = 0; k < K(); ++k) d.col(k) = x[k].row(i).transpose();
    return d;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidInput, m); };
    if (n() < 2) fail("panel needs at least 2 units");
    if (T() < 2) fail("panel needs at least 2 periods");
    if (K() < 1) fail("panel needs at least 1 regressor");
    if (!y.allFinite()) fail("outcome contains non-finite values");
    for (Eigen::Index k = 0; k < K(); ++k) {
      if (x[k].rows() != n() || x[k].cols() != T())
        fail("regressor " + std::to_string(k + 1) + " has shape inconsistent with outcome");
      if (!x[k].allFinite())
        fail("regressor " + std::to_string(k + 1) + " contains non-finite values");
    }
    if (static_cast<Eigen::Index>(unit_ids.size()) != n()) fail("unit_ids size differs from n");
    if (static_cast<Eigen::Index>(period_labels.size()) != T())
      fail("period_labels size differs from T");
    if (static_cast<Eigen::Index>(regressor_names.size()) != K())
      fail("regressor_names size differs from K");
    if (std::set<std::string>(unit_ids.begin(), unit_ids.end()).size() != unit_ids.size())
      fail("unit_ids are not unique");
    if (std::set<std::string>(period_labels.begin(), period_labels.end()).size() !=
        period_labels.size())
      fail("period_labels are not unique");
  }
};

/// Builds a validated panel, filling default labels ("1".."n", "1".."T",
/// "x1".."xK") for any label vector left empty.
inline PanelDataset make_panel(Eigen::MatrixXd y, std::vector<Eigen::MatrixXd> x,
                               std::vector<std::string> unit_ids = {},
                               std::vector<std::string> period_labels = {},
                               std::vector<std::string> regressor_names = {}) {
  PanelDataset p{std::move(y), std::move(x), std::move(unit_ids), std::move(period_labels),
                 std::move(regressor_names)};
  if (p.unit_ids.empty())
    for (Eigen::Index i = 0; i < p.n(); ++i) p.unit_ids.push_back(std::to_string(i + 1));
  if (p.period_labels.empty())
    for (Eigen::Index t = 0; t < p.T(); ++t) p.period_labels.push_back(std::to_string(t + 1));
  if (p.regressor_names.empty())
    for (Eigen::Index k = 0; k < p.K(); ++k) p.regressor_names.push_back("x" + std::to_string(k + 1));
  p.validate();
  return p;
}

/// Source of one column of the regressor stack z: regressor `regressor`
/// observed in period `period` (both zero-based).
struct ZColumn {
  Eigen::Index period = 0;
  Eigen::Index regressor = 0;
  friend bool operator==(const ZColumn&, const ZColumn&) = default;
};

/// Panel with period-wise cross-sectional means removed, plus the pruned
/// stack of all periods' regressors used for the linear projection of the
/// individual effects.
struct DemeanedPanel {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;
  Eigen::MatrixXd z;
  std::vector<ZColumn> column_map;
  /// Orthonormal basis of span(z); projections onto z go through this.
  Eigen::MatrixXd z_basis;
  std::vector<std::string> unit_ids;
  std::vector<std::string> period_labels;
  std::vector<std::string> regressor_names;

  [[nodiscard]] Eigen::Index n() const { return y.rows(); }
  [[nodiscard]] Eigen::Index T() const { return y.cols(); }
  [[nodiscard]] Eigen::Index K() const { return static_cast<Eigen::Index>(x.size()); }
  [[nodiscard]] Eigen::Index m() const { return z.cols(); }

  [[nodiscard]] Eigen::MatrixXd unit_design(Eigen::Index i) const {
    Eigen::MatrixXd d(T(), K());
    for (Eigen::Index k = 0; k < K(); ++k) d.col(k) = x[k].row(i).transpose();
    return d;
  }

  /// n x T residual matrix E(beta) with rows y_i - X_i beta.
  [[nodiscard]] Eigen::MatrixXd residual_matrix(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd e = y;
    for (Eigen::Index k = 0; k < K(); ++k) e.noalias() -= beta(k) * x[k];
    return e;
  }

  [[nodiscard]] std::string column_label(std::size_t j) const {
    const ZColumn& c = column_map.at(j);
    return regressor_names.at(static_cast<std::size_t>(c.regressor)) + "@" +
           period_labels.at(static_cast<std::size_t>(c.period));
  }
};

struct IdentificationReport {
  int T = 0;
  int q = 0;
  int m = 0;
  int K = 0;
  bool necessary_ok = false;
  int slack = 0;
  std::string message;
};

namespace detail {

inline Eigen::MatrixXd subtract_period_means(const Eigen::MatrixXd& a) {
  return a.rowwise() - a.colwise().mean();
}

inline Eigen::MatrixXd two_way_demean(const Eigen::MatrixXd& a) {
  const Eigen::VectorXd unit_mean = a.rowwise().mean();
  const Eigen::RowVectorXd period_mean = a.colwise().mean();
  const double grand = a.mean();
  Eigen::MatrixXd out = a;
  out.colwise() -= unit_mean;
  out.rowwise() -= period_mean;
  out.array() += grand;
  return out;
}

}  // namespace detail

/// Two-way within transform x_it - xbar_i. - xbar_.t + xbar applied to the
/// outcome (slot 0) and each regressor (slots 1..K).
inline std::vector<Eigen::MatrixXd> two_way_within(const PanelDataset& panel) {
  panel.validate();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(panel.K() + 1));
  out.push_back(detail::two_way_demean(panel.y));
  for (const auto& xk : panel.x) out.push_back(detail::two_way_demean(xk));
  return out;
}

/// Removes period-specific cross-sectional means and builds the pruned
/// regressor stack z. Candidate columns are (t, k) in period-major order;
/// duplicates and constants are dropped first, then a pivoted Cholesky
/// sweep of the demeaned Gram matrix (largest remaining diagonal first)
/// drops columns whose residual diagonal falls below
/// prune_tol * (largest Gram diagonal).
inline DemeanedPanel cross_section_demean(const PanelDataset& panel, double prune_tol = 1e-10) {
  panel.validate();
  if (!(prune_tol > 0.0)) throw Error(ErrorCode::InvalidInput, "prune_tol must be positive");

  const Eigen::Index n = panel.n();
  const Eigen::Index T = panel.T();
  const Eigen::Index K = panel.K();

  DemeanedPanel dp;
  dp.y = detail::subtract_period_means(panel.y);
  dp.x.reserve(static_cast<std::size_t>(K));
  for (const auto& xk : panel.x) dp.x.push_back(detail::subtract_period_means(xk));
  dp.unit_ids = panel.unit_ids;
  dp.period_labels = panel.period_labels;
  dp.regressor_names = panel.regressor_names;

  // Candidate screening: exact duplicates and constants.
  std::vector<ZColumn> candidates;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto col = panel.x[k].col(t);
      if (col.maxCoeff() == col.minCoeff()) continue;
      const bool duplicate = std::any_of(candidates.begin(), candidates.end(), [&](const ZColumn& c) {
        return panel.x[c.regressor].col(c.period) == col;
      });
      if (!duplicate) candidates.push_back({t, k});
    }
  }

  const auto c = static_cast<Eigen::Index>(candidates.size());
  Eigen::MatrixXd d(n, c);
  for (Eigen::Index j = 0; j < c; ++j)
    d.col(j) = dp.x[candidates[j].regressor].col(candidates[j].period);

  std::vector<Eigen::Index> pivots;
  if (c > 0) {
    const Eigen::MatrixXd gram = d.transpose() * d;
    Eigen::VectorXd resid = gram.diagonal();
    const double scale = resid.maxCoeff();
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(c, c);
    std::vector<bool> used(static_cast<std::size_t>(c), false);
    for (Eigen::Index r = 0; r < c && scale > 0.0; ++r) {
      Eigen::Index p = -1;
      for (Eigen::Index j = 0; j < c; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        if (p < 0 || resid(j) > resid(p)) p = j;
      }
      if (p < 0 || !(resid(p) > prune_tol * scale)) break;
      used[static_cast<std::size_t>(p)] = true;
      pivots.push_back(p);
      const double lpp = std::sqrt(resid(p));
      for (Eigen::Index j = 0; j < c; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        double v = gram(j, p);
        for (Eigen::Index s = 0; s < r; ++s) v -= l(j, s) * l(p, s);
        l(j, r) = v / lpp;
        resid(j) -= l(j, r) * l(j, r);
      }
      l(p, r) = lpp;
    }
    // Guarantee the conditioning invariant by shedding the latest pivots.
    while (!pivots.empty()) {
      std::vector<Eigen::Index> sorted = pivots;
      std::sort(sorted.begin(), sorted.end());
      Eigen::MatrixXd g(static_cast<Eigen::Index>(sorted.size()), static_cast<Eigen::Index>(sorted.size()));
      for (std::size_t a = 0; a < sorted.size(); ++a)
        for (std::size_t b = 0; b < sorted.size(); ++b)
          g(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = gram(sorted[a], sorted[b]);
      if (linalg::reciprocal_condition(g) > prune_tol) break;
      pivots.pop_back();
    }
  }
  if (pivots.empty()) {
    throw Error(ErrorCode::AllColumnsPruned,
                "no regressor column has usable cross-sectional variation");
  }
  std::sort(pivots.begin(), pivots.end());

  dp.z.resize(n, static_cast<Eigen::Index>(pivots.size()));
  for (std::size_t j = 0; j < pivots.size(); ++j) {
    dp.z.col(static_cast<Eigen::Index>(j)) = d.col(pivots[j]);
    dp.column_map.push_back(candidates[static_cast<std::size_t>(pivots[j])]);
  }
  dp.z_basis = linalg::orthonormal_basis(dp.z);
  return dp;
}

/// Parameter-counting necessary condition (T - q)(m - q) >= K.
inline IdentificationReport identification_check(int T, int q, int m, int K) {
  IdentificationReport r;
  r.T = T;
  r.q = q;
  r.m = m;
  r.K = K;
  r.slack = (T - q) * (m - q) - K;
  std::ostringstream msg;
  if (T < 1 || q < 1 || m < 1 || K < 1) {
    r.necessary_ok = false;
    msg << "T, q, m and K must all be positive";
  } else if (q >= T) {
    r.necessary_ok = false;
    msg << "factor count q=" << q << " must be below T=" << T;
  } else if (q > m) {
    r.necessary_ok = false;
    msg << "factor count q=" << q << " exceeds regressor-stack width m=" << m;
  } else if (r.slack < 0) {
    r.necessary_ok = false;
    msg << "not identified: (T-q)(m-q) >= K fails, (" << T << "-" << q << ")(" << m << "-" << q
        << ") = " << (T - q) * (m - q) << " < K = " << K;
  } else {
    r.necessary_ok = true;
    msg << "necessary condition (T-q)(m-q) >= K holds: (" << T << "-" << q << ")(" << m << "-"
        << q << ") = " << (T - q) * (m - q) << " >= K = " << K << " (slack " << r.slack << ")";
  }
  r.message = msg.str();
  return r;
}

}  // namespace pie
