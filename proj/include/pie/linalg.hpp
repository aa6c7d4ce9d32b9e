// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "pie/error.hpp"

/// Small dense linear-algebra helpers shared by the estimators and the
/// covariance code. All matrices here are tiny (at most a few dozen rows)
/// except the n x m regressor stack, which only ever goes through QR.
namespace pie::linalg {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

/// Ratio of smallest to largest absolute eigenvalue of a symmetric matrix.
/// Returns 0 for the zero matrix.
inline double reciprocal_condition(const Eigen::MatrixXd& sym) {
  if (sym.rows() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd abs_ev = es.eigenvalues().cwiseAbs();
  const double hi = abs_ev.maxCoeff();
  if (!(hi > 0.0) || !std::isfinite(hi)) return 0.0;
  return abs_ev.minCoeff() / hi;
}

/// Solves sym * x = rhs after checking the reciprocal condition number.
inline Eigen::MatrixXd solve_symmetric(const Eigen::MatrixXd& sym, const Eigen::MatrixXd& rhs,
                                       double min_rcond, ErrorCode code,
                                       const std::string& what) {
  const double rc = reciprocal_condition(sym);
  if (!(rc > min_rcond)) {
    throw Error(code, what + " is numerically singular (reciprocal condition " +
                          std::to_string(rc) + ")");
  }
  return symmetrize(sym).ldlt().solve(rhs);
}

inline Eigen::MatrixXd inverse_symmetric(const Eigen::MatrixXd& sym, double min_rcond,
                                         ErrorCode code, const std::string& what) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(sym.rows(), sym.cols());
  return symmetrize(solve_symmetric(sym, eye, min_rcond, code, what));
}

/// Thin orthonormal basis for the column space of a full-column-rank matrix.
inline Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

/// Flips column signs so that each column's largest-magnitude entry is
/// positive (first such entry on ties).
inline void canonicalize_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double a = std::abs(m(r, c));
      if (a > best + 1e-14 * std::max(1.0, best)) {
        best = a;
        arg = r;
      }
    }
    if (m(arg, c) < 0.0) m.col(c) *= -1.0;
  }
}

/// Sine of the largest principal angle between the column spaces of a and b.
inline double subspace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd qa = orthonormal_basis(a);
  const Eigen::MatrixXd qb = orthonormal_basis(b);
  const Eigen::MatrixXd resid = qb - qa * (qa.transpose() * qb);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(resid);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

}  // namespace pie::linalg
