// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "pie/error.hpp"
#include "pie/estimators.hpp"
#include "pie/linalg.hpp"
#include "pie/panel.hpp"

namespace pie {

inline constexpr double kSingularHRcond = 1e-12;
inline constexpr double kContrastRcond = 1e-10;

/// Upper tail Q(a, x) of the regularized incomplete gamma function. Series
/// for x < a + 1, modified Lentz continued fraction otherwise.
inline double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw Error(ErrorCode::InvalidInput, "gamma shape must be positive");
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  constexpr int kMaxTerms = 100000;
  constexpr double kEps = 1e-17;
  if (x < a + 1.0) {
    double ap = a;
    double term = 1.0 / a;
    double sum = term;
    for (int i = 0; i < kMaxTerms; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_prefactor) * h;
}

/// Upper-tail probability of a chi-square(df) variate.
inline double chi_square_sf(double x, int df) {
  if (df < 1) throw Error(ErrorCode::InvalidInput, "chi-square degrees of freedom must be >= 1");
  if (x < 0.0 || std::isnan(x)) throw Error(ErrorCode::InvalidInput, "chi-square argument must be >= 0");
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

struct CovarianceOptions {
  /// Multiply the score outer-product average by n/(n-1).
  bool cluster_correction = false;
};

/// Per-unit Jacobian blocks and residuals feeding the sandwich estimators.
/// Column layout of R_hat: beta (K), vec(Theta) (m q, factor-major),
/// vec(Lambda_2) ((T-q) q, factor-major).
struct ScoreMatrixSet {
  std::vector<Eigen::MatrixXd> R_hat;
  std::vector<Eigen::MatrixXd> R_plus;
  std::vector<Eigen::VectorXd> u_hat;
  std::vector<Eigen::VectorXd> u_plus;
  Eigen::Index K = 0;
  Eigen::Index m = 0;
  Eigen::Index q = 0;
  Eigen::Index T = 0;

  [[nodiscard]] Eigen::Index n() const { return static_cast<Eigen::Index>(R_hat.size()); }
  [[nodiscard]] Eigen::Index p() const { return K + q * (m + T - q); }
};

struct SandwichCovariance {
  Eigen::MatrixXd H;
  Eigen::MatrixXd A;
  Eigen::MatrixXd cov;

  [[nodiscard]] Eigen::VectorXd standard_errors(Eigen::Index count) const {
    return cov.diagonal().head(count).cwiseSqrt();
  }
};

struct SpecTestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  Eigen::VectorXd contrast;
  Eigen::MatrixXd contrast_cov;
};

/// Assembles the per-unit Jacobians of the fitted values with respect to
/// (beta, theta, lambda) at the estimate, the PIE residuals, and the
/// augmented blocks that stack the TWFE scores evaluated at b.
inline ScoreMatrixSet build_scores(const DemeanedPanel& dp, const PieEstimate& est, const Eigen::VectorXd& b) {
  const Eigen::Index n = dp.n(), T = dp.T(), K = dp.K(), m = dp.m();
  const Eigen::Index q = est.loadings.q();
  if (est.beta.size() != K || b.size() != K || est.theta.rows() != m || est.theta.cols() != q ||
      est.loadings.T() != T)
    throw Error(ErrorCode::DimensionMismatch, "estimate does not match the demeaned panel");
  const Eigen::MatrixXd& lambda = est.loadings.normalized();
  const Eigen::Index tq = T - q;

  ScoreMatrixSet s;
  s.K = K;
  s.m = m;
  s.q = q;
  s.T = T;
  const Eigen::Index p = s.p();
  s.R_hat.reserve(static_cast<std::size_t>(n));
  s.R_plus.reserve(static_cast<std::size_t>(n));
  s.u_hat.reserve(static_cast<std::size_t>(n));
  s.u_plus.reserve(static_cast<std::size_t>(n));

  const Eigen::MatrixXd within =
      Eigen::MatrixXd::Identity(T, T) - Eigen::MatrixXd::Constant(T, T, 1.0 / static_cast<double>(T));

  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd xi = dp.unit_design(i);
    const Eigen::VectorXd zi = dp.z.row(i).transpose();
    const Eigen::VectorXd yi = dp.y.row(i).transpose();
    const Eigen::VectorXd factor_scores = est.theta.transpose() * zi;  // q-vector Z_i theta

    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(T, p);
    r.leftCols(K) = xi;
    for (Eigen::Index k = 0; k < q; ++k)
      r.block(0, K + k * m, T, m) = lambda.col(k) * zi.transpose();
    for (Eigen::Index k = 0; k < q; ++k)
      for (Eigen::Index row = 0; row < tq; ++row)
        r(q + row, K + m * q + k * tq + row) = factor_scores(k);

    Eigen::VectorXd u = yi - xi * est.beta - lambda * factor_scores;

    Eigen::MatrixXd rp = Eigen::MatrixXd::Zero(2 * T, p + K);
    rp.topLeftCorner(T, p) = r;
    rp.bottomRightCorner(T, K) = within * xi;
    Eigen::VectorXd up(2 * T);
    up << u, yi - xi * b;

    s.R_hat.push_back(std::move(r));
    s.u_hat.push_back(std::move(u));
    s.R_plus.push_back(std::move(rp));
    s.u_plus.push_back(std::move(up));
  }
  return s;
}

namespace detail {

inline SandwichCovariance sandwich(const std::vector<Eigen::MatrixXd>& r, const std::vector<Eigen::VectorXd>& u,
                                   const CovarianceOptions& opts) {
  const auto n = static_cast<Eigen::Index>(r.size());
  if (n == 0) throw Error(ErrorCode::DimensionMismatch, "no units in score set");
  const Eigen::Index p = r.front().cols();
  SandwichCovariance out;
  out.H = Eigen::MatrixXd::Zero(p, p);
  out.A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ri = r[static_cast<std::size_t>(i)];
    out.H.noalias() += ri.transpose() * ri;
    const Eigen::VectorXd g = ri.transpose() * u[static_cast<std::size_t>(i)];
    out.A.noalias() += g * g.transpose();
  }
  const double nd = static_cast<double>(n);
  out.H = linalg::symmetrize(out.H / nd);
  out.A = linalg::symmetrize(out.A / nd);
  if (opts.cluster_correction) out.A *= nd / (nd - 1.0);
  const Eigen::MatrixXd h_inv = linalg::inverse_symmetric(out.H, kSingularHRcond, ErrorCode::SingularH,
                                                          "average score Gram matrix H");
  out.cov = linalg::symmetrize(h_inv * out.A * h_inv / nd);
  return out;
}

}  // namespace detail

/// Sandwich covariance H^{-1} A H^{-1} / n of the full parameter vector.
inline SandwichCovariance pie_vcov(const ScoreMatrixSet& scores, const CovarianceOptions& opts = {}) {
  return detail::sandwich(scores.R_hat, scores.u_hat, opts);
}

/// Joint covariance of (psi, beta_FE) from the block-diagonal augmented
/// scores.
inline SandwichCovariance joint_vcov(const ScoreMatrixSet& scores, const DemeanedPanel& dp,
                                     const CovarianceOptions& opts = {}) {
  if (scores.n() != dp.n() || scores.T != dp.T() || scores.K != dp.K())
    throw Error(ErrorCode::DimensionMismatch, "score set does not match the demeaned panel");
  return detail::sandwich(scores.R_plus, scores.u_plus, opts);
}

/// Contrast statistic for the consistency of TWFE; defined for q = 1 only.
inline SpecTestResult hausman_test(const PieEstimate& pie, const TwfeEstimate& twfe, const Eigen::MatrixXd& joint_cov) {
  if (pie.loadings.q() != 1)
    throw Error(ErrorCode::UnsupportedFactorCount, "the specification test is defined for q = 1 only");
  const Eigen::Index K = pie.beta.size();
  if (twfe.beta.size() != K || joint_cov.rows() != joint_cov.cols() || joint_cov.rows() < 2 * K)
    throw Error(ErrorCode::DimensionMismatch, "hausman_test: inconsistent shapes");
  const Eigen::Index dim = joint_cov.rows();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(K, dim);
  c.leftCols(K).setIdentity();
  c.rightCols(K) = -Eigen::MatrixXd::Identity(K, K);

  SpecTestResult r;
  r.df = static_cast<int>(K);
  r.contrast = pie.beta - twfe.beta;
  r.contrast_cov = linalg::symmetrize(c * joint_cov * c.transpose());
  if (r.contrast.cwiseAbs().maxCoeff() == 0.0) {
    r.statistic = 0.0;
    r.p_value = 1.0;
    return r;
  }
  const Eigen::VectorXd w = linalg::solve_symmetric(r.contrast_cov, r.contrast, kContrastRcond,
                                                    ErrorCode::SingularContrastCov, "contrast covariance");
  r.statistic = std::max(0.0, r.contrast.dot(w));
  r.p_value = chi_square_sf(r.statistic, r.df);
  return r;
}

inline SpecTestResult hausman_test(const PieEstimate& pie, const TwfeEstimate& twfe, const SandwichCovariance& jcov) {
  return hausman_test(pie, twfe, jcov.cov);
}

enum class ResidualCentering { Twfe, Pie };

struct SpecificationTestRun {
  DemeanedPanel demeaned;
  PieEstimate pie;
  TwfeEstimate twfe;
  SandwichCovariance joint;
  SpecTestResult test;
};

/// Full pipeline: PIE (q = 1) and TWFE fits, PIE covariance, joint
/// covariance, and the contrast test.
inline SpecificationTestRun run_specification_test(const PanelDataset& panel, const FitOptions& opts = {},
                                                   ResidualCentering centering = ResidualCentering::Twfe,
                                                   const CovarianceOptions& cov_opts = {}) {
  SpecificationTestRun run;
  run.demeaned = cross_section_demean(panel, opts.prune_tol);
  run.pie = pie_fit(run.demeaned, 1, opts);
  run.twfe = twfe_fit(panel, cov_opts.cluster_correction);
  const Eigen::VectorXd& b = centering == ResidualCentering::Twfe ? run.twfe.beta : run.pie.beta;
  const ScoreMatrixSet scores = build_scores(run.demeaned, run.pie, b);
  run.pie.vcov = pie_vcov(scores, cov_opts).cov;
  run.joint = joint_vcov(scores, run.demeaned, cov_opts);
  run.test = hausman_test(run.pie, run.twfe, run.joint);
  return run;
}

}  // namespace pie
