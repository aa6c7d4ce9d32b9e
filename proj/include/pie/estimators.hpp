// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pie/error.hpp"
#include "pie/linalg.hpp"
#include "pie/panel.hpp"
#include "pie/random.hpp"

namespace pie {

inline constexpr double kSingularDesignRcond = 1e-12;
inline constexpr double kNormalizationRcond = 1e-10;
inline constexpr double kDegenerateGap = 1e-12;

/// T x q factor loadings. Iteration works with the orthonormal basis; the
/// normalized form (first q rows equal to I_q) is the reported
/// parameterization and may be unavailable when the leading block of the
/// orthonormal basis is singular.
struct FactorLoadings {
  Eigen::MatrixXd orthonormal;
  std::optional<Eigen::MatrixXd> normalized_form;
  /// Full spectrum of the criterion matrix in descending order when the
  /// loadings come from an eigen step; empty otherwise.
  Eigen::VectorXd eigenvalues;
  bool degenerate_spectrum = false;

  [[nodiscard]] Eigen::Index T() const { return orthonormal.rows(); }
  [[nodiscard]] Eigen::Index q() const { return orthonormal.cols(); }
  [[nodiscard]] bool has_normalized() const { return normalized_form.has_value(); }

  [[nodiscard]] const Eigen::MatrixXd& normalized() const {
    if (!normalized_form) {
      throw Error(ErrorCode::NormalizationSingular,
                  "leading q x q block of the loadings is singular; normalized form unavailable");
    }
    return *normalized_form;
  }

  /// Free entries of the normalized loadings (rows q..T-1), column-major.
  [[nodiscard]] Eigen::VectorXd lambda_vec() const {
    const Eigen::MatrixXd& l = normalized();
    const Eigen::Index rows = T() - q();
    Eigen::VectorXd v(rows * q());
    for (Eigen::Index k = 0; k < q(); ++k) v.segment(k * rows, rows) = l.col(k).tail(rows);
    return v;
  }

  /// Normalized form of an orthonormal basis, or nullopt when the leading
  /// block has reciprocal condition below the normalization threshold.
  static std::optional<Eigen::MatrixXd> normalize(const Eigen::MatrixXd& basis) {
    const Eigen::Index q = basis.cols();
    const Eigen::MatrixXd lead = basis.topRows(q);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(lead);
    const Eigen::VectorXd sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(q - 1) / sv(0) < kNormalizationRcond) return std::nullopt;
    Eigen::MatrixXd out = basis * lead.inverse();
    out.topRows(q).setIdentity();
    return out;
  }

  static FactorLoadings from_orthonormal(Eigen::MatrixXd basis) {
    linalg::canonicalize_signs(basis);
    FactorLoadings f;
    f.normalized_form = normalize(basis);
    f.orthonormal = std::move(basis);
    return f;
  }

  /// Loadings spanning the columns of any full-column-rank T x q matrix.
  static FactorLoadings from_matrix(const Eigen::MatrixXd& lambda) {
    if (lambda.cols() < 1 || lambda.cols() >= lambda.rows() + 1)
      throw Error(ErrorCode::DimensionMismatch, "loadings must be T x q with 1 <= q <= T");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lambda);
    if (lu.rank() < lambda.cols())
      throw Error(ErrorCode::InvalidInput, "loadings matrix is column-rank deficient");
    return from_orthonormal(linalg::orthonormal_basis(lambda));
  }
};

struct TwfeEstimate {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  Eigen::MatrixXd residuals;

  [[nodiscard]] Eigen::VectorXd standard_errors() const { return vcov.diagonal().cwiseSqrt(); }
};

enum class InitStrategy { TwfeStart, RandomStart };

struct FitOptions {
  double tol = 1e-8;
  int max_iter = 1000;
  InitStrategy init = InitStrategy::TwfeStart;
  int n_starts = 1;
  std::uint64_t seed = 0;
  double prune_tol = 1e-10;
  /// Overrides the first start's loadings when set (any full-rank T x q).
  std::optional<Eigen::MatrixXd> initial_loadings;

  void validate() const {
    if (!(tol > 0.0)) throw Error(ErrorCode::InvalidInput, "tol must be positive");
    if (max_iter < 1) throw Error(ErrorCode::InvalidInput, "max_iter must be at least 1");
    if (n_starts < 1) throw Error(ErrorCode::InvalidInput, "n_starts must be at least 1");
    if (!(prune_tol > 0.0)) throw Error(ErrorCode::InvalidInput, "prune_tol must be positive");
  }
};

struct PieEstimate {
  Eigen::VectorXd beta;
  FactorLoadings loadings;
  /// m x q projection coefficients against the normalized loadings.
  Eigen::MatrixXd theta;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
  std::optional<Eigen::MatrixXd> vcov;
  Eigen::MatrixXd residuals;
  std::vector<ZColumn> column_map;
  IdentificationReport identification;
  int best_start = 0;

  /// Stacked parameter vector (beta, vec(Theta), vec(Lambda_2)).
  [[nodiscard]] Eigen::VectorXd psi() const {
    const Eigen::VectorXd lam = loadings.lambda_vec();
    Eigen::VectorXd p(beta.size() + theta.size() + lam.size());
    p << beta, theta.reshaped(), lam;
    return p;
  }

  [[nodiscard]] Eigen::VectorXd standard_errors() const {
    if (!vcov) return Eigen::VectorXd::Constant(beta.size(), std::numeric_limits<double>::quiet_NaN());
    return vcov->diagonal().head(beta.size()).cwiseSqrt();
  }
};

enum class FactorCriterion {
  /// E(b)' P_z E(b): the projection-based small-T estimator.
  Projected,
  /// E(b)' E(b): the large-T least-squares factor estimator.
  Unrestricted,
};

namespace detail {

/// T x T cross-products of the demeaned data, plus the m x T coefficients
/// of every variable on the orthonormal basis of z. With these, every
/// quantity of one iteration costs O(K^2 T^2) independent of n.
struct CrossMoments {
  Eigen::MatrixXd yy;
  std::vector<Eigen::MatrixXd> xy;
  std::vector<std::vector<Eigen::MatrixXd>> xx;
  Eigen::MatrixXd fy;
  std::vector<Eigen::MatrixXd> fx;
  Eigen::Index n = 0;

  explicit CrossMoments(const DemeanedPanel& dp) : n(dp.n()) {
    const Eigen::Index K = dp.K();
    yy = dp.y.transpose() * dp.y;
    fy = dp.z_basis.transpose() * dp.y;
    xy.resize(static_cast<std::size_t>(K));
    fx.resize(static_cast<std::size_t>(K));
    xx.assign(static_cast<std::size_t>(K), std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(K)));
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      xy[ku] = dp.x[ku].transpose() * dp.y;
      fx[ku] = dp.z_basis.transpose() * dp.x[ku];
      for (Eigen::Index l = 0; l <= k; ++l) {
        const auto lu = static_cast<std::size_t>(l);
        xx[ku][lu] = dp.x[ku].transpose() * dp.x[lu];
        if (l != k) xx[lu][ku] = xx[ku][lu].transpose();
      }
    }
  }

  [[nodiscard]] Eigen::Index K() const { return static_cast<Eigen::Index>(xy.size()); }

  /// E(b)'E(b).
  [[nodiscard]] Eigen::MatrixXd residual_gram(const Eigen::VectorXd& b) const {
    Eigen::MatrixXd s = yy;
    for (Eigen::Index k = 0; k < K(); ++k) {
      const auto ku = static_cast<std::size_t>(k);
      s.noalias() -= b(k) * (xy[ku] + xy[ku].transpose());
      for (Eigen::Index l = 0; l < K(); ++l) s.noalias() += b(k) * b(l) * xx[ku][static_cast<std::size_t>(l)];
    }
    return linalg::symmetrize(s);
  }

  /// Least-squares coefficients of E(b) on the orthonormal z basis.
  [[nodiscard]] Eigen::MatrixXd projected_residual(const Eigen::VectorXd& b) const {
    Eigen::MatrixXd f = fy;
    for (Eigen::Index k = 0; k < K(); ++k) f.noalias() -= b(k) * fx[static_cast<std::size_t>(k)];
    return f;
  }

  [[nodiscard]] Eigen::MatrixXd criterion(const Eigen::VectorXd& b, FactorCriterion c) const {
    if (c == FactorCriterion::Unrestricted) return residual_gram(b);
    const Eigen::MatrixXd f = projected_residual(b);
    return linalg::symmetrize(f.transpose() * f);
  }

  /// (1/2n) e(b)' M e(b), where M removes the fitted factor part for the
  /// given orthonormal loadings under criterion c.
  [[nodiscard]] double concentrated_objective(const Eigen::VectorXd& b, const Eigen::MatrixXd& v,
                                              FactorCriterion c) const {
    const double total = residual_gram(b).trace();
    const Eigen::MatrixXd sigma = criterion(b, c);
    const double explained = (v.transpose() * sigma * v).trace();
    return (total - explained) / (2.0 * static_cast<double>(n));
  }

  /// Minimizer over b of sum_i (y_i - X_i b)' Q(v) (y_i - X_i b).
  [[nodiscard]] Eigen::VectorXd beta_given(const Eigen::MatrixXd& v) const {
    const Eigen::Index K = this->K();
    Eigen::MatrixXd gram(K, K);
    Eigen::VectorXd rhs(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      rhs(k) = xy[ku].trace() - (v.transpose() * xy[ku] * v).trace();
      for (Eigen::Index l = 0; l < K; ++l) {
        const auto& c = xx[ku][static_cast<std::size_t>(l)];
        gram(k, l) = c.trace() - (v.transpose() * c * v).trace();
      }
    }
    return linalg::solve_symmetric(gram, rhs, kSingularDesignRcond, ErrorCode::SingularDesign,
                                   "generalized within Gram matrix");
  }
};

struct Eigenpairs {
  Eigen::MatrixXd vectors;  // T x q, orthonormal, canonical signs
  Eigen::VectorXd values;   // all T eigenvalues, descending
  bool degenerate = false;
};

inline Eigenpairs top_eigenpairs(const Eigen::MatrixXd& sigma, Eigen::Index q) {
  const Eigen::Index T = sigma.rows();
  if (q < 1 || q >= T + 1) throw Error(ErrorCode::InvalidInput, "factor count out of range");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(linalg::symmetrize(sigma));
  Eigenpairs out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse().leftCols(q);
  linalg::canonicalize_signs(out.vectors);
  if (q < T) {
    const double scale = std::max(1.0, std::abs(out.values(0)));
    out.degenerate = std::abs(out.values(q - 1) - out.values(q)) < kDegenerateGap * scale;
  }
  return out;
}

inline Eigen::MatrixXd iota_basis(Eigen::Index T) {
  return Eigen::MatrixXd::Constant(T, 1, 1.0 / std::sqrt(static_cast<double>(T)));
}

struct AlternatingRun {
  Eigen::VectorXd beta;
  Eigenpairs loadings;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

inline AlternatingRun alternate(const CrossMoments& mom, Eigen::Index q, const FitOptions& opts,
                                FactorCriterion crit, Eigen::VectorXd beta) {
  AlternatingRun run;
  for (int it = 1; it <= opts.max_iter; ++it) {
    Eigenpairs l = top_eigenpairs(mom.criterion(beta, crit), q);
    Eigen::VectorXd next = mom.beta_given(l.vectors);
    run.trace.push_back(mom.concentrated_objective(next, l.vectors, crit));
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = std::move(next);
    run.loadings = std::move(l);
    run.iterations = it;
    if (change < opts.tol) {
      run.converged = true;
      break;
    }
  }
  run.beta = std::move(beta);
  return run;
}

inline Eigen::MatrixXd random_loadings(std::uint64_t seed, int start, Eigen::Index T, Eigen::Index q) {
  const random::KeyedStream stream(seed, static_cast<std::uint64_t>(start), 0, random::Role::StartLoadings);
  Eigen::MatrixXd g(T, q);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index k = 0; k < q; ++k) g(t, k) = stream.normal(static_cast<std::uint64_t>(t * q + k));
  return linalg::orthonormal_basis(g);
}

}  // namespace detail

/// Q(lambda) = I_T - Lambda (Lambda'Lambda)^{-1} Lambda'.
inline Eigen::MatrixXd generalized_within(const FactorLoadings& loadings) {
  const Eigen::Index T = loadings.T();
  return Eigen::MatrixXd::Identity(T, T) - loadings.orthonormal * loadings.orthonormal.transpose();
}

/// Loadings from the top-q eigenvectors of a symmetric T x T criterion.
inline FactorLoadings top_loadings(const Eigen::MatrixXd& sigma, Eigen::Index q) {
  detail::Eigenpairs e = detail::top_eigenpairs(sigma, q);
  FactorLoadings f = FactorLoadings::from_orthonormal(std::move(e.vectors));
  f.eigenvalues = std::move(e.values);
  f.degenerate_spectrum = e.degenerate;
  return f;
}

inline Eigen::VectorXd beta_step(const DemeanedPanel& dp, const FactorLoadings& loadings) {
  if (loadings.T() != dp.T()) throw Error(ErrorCode::DimensionMismatch, "loadings have wrong T");
  return detail::CrossMoments(dp).beta_given(loadings.orthonormal);
}

/// Criterion matrix E(b)'P_z E(b) (Projected) or E(b)'E(b) (Unrestricted).
inline Eigen::MatrixXd factor_criterion(const DemeanedPanel& dp, const Eigen::VectorXd& beta,
                                        FactorCriterion crit = FactorCriterion::Projected) {
  const Eigen::MatrixXd e = dp.residual_matrix(beta);
  if (crit == FactorCriterion::Unrestricted) return linalg::symmetrize(e.transpose() * e);
  const Eigen::MatrixXd f = dp.z_basis.transpose() * e;
  return linalg::symmetrize(f.transpose() * f);
}

inline FactorLoadings lambda_step(const DemeanedPanel& dp, const Eigen::VectorXd& beta, Eigen::Index q,
                                  FactorCriterion crit = FactorCriterion::Projected) {
  if (q < 1 || q >= dp.T()) throw Error(ErrorCode::InvalidInput, "need 1 <= q < T");
  if (beta.size() != dp.K()) throw Error(ErrorCode::DimensionMismatch, "beta has wrong length");
  return top_loadings(factor_criterion(dp, beta, crit), q);
}

/// Least-squares projection coefficients for given loadings, with both the
/// (z kron Lambda) design and y residualized on the stacked X. Returns the
/// m x q matrix Theta.
inline Eigen::MatrixXd theta_recover(const DemeanedPanel& dp, const Eigen::MatrixXd& lambda) {
  const Eigen::Index n = dp.n(), T = dp.T(), K = dp.K(), m = dp.m(), q = lambda.cols();
  if (lambda.rows() != T) throw Error(ErrorCode::DimensionMismatch, "loadings have wrong T");
  const Eigen::Index rows = n * T;
  Eigen::MatrixXd w(rows, m * q);
  Eigen::MatrixXd xs(rows, K);
  Eigen::VectorXd ys(rows);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::Index r = i * T + t;
      ys(r) = dp.y(i, t);
      for (Eigen::Index k = 0; k < K; ++k) xs(r, k) = dp.x[static_cast<std::size_t>(k)](i, t);
      for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = 0; k < q; ++k) w(r, j * q + k) = dp.z(i, j) * lambda(t, k);
    }
  }
  const Eigen::MatrixXd qx = linalg::orthonormal_basis(xs);
  w -= qx * (qx.transpose() * w);
  ys -= qx * (qx.transpose() * ys);
  const Eigen::VectorXd theta_o =
      linalg::solve_symmetric(w.transpose() * w, w.transpose() * ys, kSingularDesignRcond,
                              ErrorCode::SingularProjection, "residualized projection Gram matrix");
  Eigen::MatrixXd theta(m, q);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index k = 0; k < q; ++k) theta(j, k) = theta_o(j * q + k);
  return theta;
}

inline Eigen::MatrixXd theta_recover(const DemeanedPanel& dp, const FactorLoadings& loadings) {
  return theta_recover(dp, loadings.normalized());
}

/// S_n = (1/2n) sum_i || y_i - X_i beta - Lambda Theta' z_i ||^2.
inline double nls_objective(const DemeanedPanel& dp, const Eigen::VectorXd& beta,
                            const Eigen::MatrixXd& theta, const Eigen::MatrixXd& lambda) {
  if (beta.size() != dp.K() || theta.rows() != dp.m() || lambda.rows() != dp.T() ||
      theta.cols() != lambda.cols())
    throw Error(ErrorCode::DimensionMismatch, "nls_objective: inconsistent shapes");
  const Eigen::MatrixXd r = dp.residual_matrix(beta) - dp.z * theta * lambda.transpose();
  return r.squaredNorm() / (2.0 * static_cast<double>(dp.n()));
}

inline double nls_objective(const DemeanedPanel& dp, const Eigen::VectorXd& beta,
                            const Eigen::MatrixXd& theta, const FactorLoadings& loadings) {
  return nls_objective(dp, beta, theta, loadings.normalized());
}

/// Two-way fixed effects with a unit-clustered sandwich covariance.
inline TwfeEstimate twfe_fit(const PanelDataset& panel, bool cluster_correction = false) {
  const std::vector<Eigen::MatrixXd> w = two_way_within(panel);
  const Eigen::Index n = panel.n(), K = panel.K();
  Eigen::MatrixXd gram(K, K);
  Eigen::VectorXd rhs(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto& wk = w[static_cast<std::size_t>(k + 1)];
    rhs(k) = wk.cwiseProduct(w[0]).sum();
    for (Eigen::Index l = 0; l < K; ++l) gram(k, l) = wk.cwiseProduct(w[static_cast<std::size_t>(l + 1)]).sum();
  }
  // A 1x1 Gram always has rcond 1, so also measure within variation
  // against each regressor's total variation.
  Eigen::VectorXd scale(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::MatrixXd& xk = panel.x[static_cast<std::size_t>(k)];
    const double total = (xk.array() - xk.mean()).square().sum();
    scale(k) = total > 0.0 ? 1.0 / std::sqrt(total) : 0.0;
  }
  const Eigen::MatrixXd scaled = scale.asDiagonal() * gram * scale.asDiagonal();
  if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(scaled, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() <=
      kSingularDesignRcond)
    throw Error(ErrorCode::SingularDesign,
                "two-way within Gram matrix is singular: a regressor (or combination) has no within variation");
  TwfeEstimate est;
  est.beta = linalg::solve_symmetric(gram, rhs, kSingularDesignRcond, ErrorCode::SingularDesign,
                                     "two-way within Gram matrix");
  est.residuals = w[0];
  for (Eigen::Index k = 0; k < K; ++k) est.residuals.noalias() -= est.beta(k) * w[static_cast<std::size_t>(k + 1)];

  Eigen::MatrixXd scores(n, K);
  for (Eigen::Index k = 0; k < K; ++k)
    scores.col(k) = w[static_cast<std::size_t>(k + 1)].cwiseProduct(est.residuals).rowwise().sum();
  const double nd = static_cast<double>(n);
  const Eigen::MatrixXd h_inv = linalg::inverse_symmetric(gram / nd, kSingularDesignRcond,
                                                          ErrorCode::SingularDesign, "two-way within Gram matrix");
  Eigen::MatrixXd a = scores.transpose() * scores / nd;
  if (cluster_correction) a *= nd / (nd - 1.0);
  est.vcov = linalg::symmetrize(h_inv * a * h_inv / nd);
  return est;
}

namespace detail {

inline PieEstimate fit_factor_model(const DemeanedPanel& dp, Eigen::Index q, const FitOptions& opts,
                                    FactorCriterion crit) {
  const CrossMoments mom(dp);
  const Eigen::Index T = dp.T();

  AlternatingRun best;
  double best_obj = std::numeric_limits<double>::infinity();
  int best_start = -1;
  for (int s = 0; s < opts.n_starts; ++s) {
    Eigen::VectorXd beta0;
    if (s == 0 && opts.initial_loadings) {
      const FactorLoadings init = FactorLoadings::from_matrix(*opts.initial_loadings);
      if (init.T() != T || init.q() != q)
        throw Error(ErrorCode::DimensionMismatch, "initial_loadings must be T x q");
      beta0 = mom.beta_given(init.orthonormal);
    } else if (s == 0 && opts.init == InitStrategy::TwfeStart) {
      beta0 = mom.beta_given(iota_basis(T));
    } else {
      beta0 = mom.beta_given(random_loadings(opts.seed, s, T, q));
    }
    AlternatingRun run = alternate(mom, q, opts, crit, std::move(beta0));
    const double obj = run.trace.back();
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(run);
      best_start = s;
    }
  }

  PieEstimate est;
  est.beta = best.beta;
  est.loadings = FactorLoadings::from_orthonormal(best.loadings.vectors);
  est.loadings.eigenvalues = best.loadings.values;
  est.loadings.degenerate_spectrum = best.loadings.degenerate;
  est.iterations = best.iterations;
  est.converged = best.converged;
  est.objective_trace = std::move(best.trace);
  est.column_map = dp.column_map;
  est.best_start = best_start;

  const Eigen::MatrixXd& lambda = est.loadings.normalized();
  est.theta = theta_recover(dp, lambda);
  const Eigen::MatrixXd e = dp.residual_matrix(est.beta);
  if (crit == FactorCriterion::Projected) {
    est.residuals = e - dp.z * est.theta * lambda.transpose();
  } else {
    const Eigen::MatrixXd& v = est.loadings.orthonormal;
    est.residuals = e - e * v * v.transpose();
  }
  est.objective = est.residuals.squaredNorm() / (2.0 * static_cast<double>(dp.n()));
  return est;
}

}  // namespace detail

/// Projection-based interactive-effects estimator on an already demeaned
/// panel. Throws NotIdentified when the counting condition fails.
inline PieEstimate pie_fit(const DemeanedPanel& dp, int q, const FitOptions& opts = {}) {
  opts.validate();
  IdentificationReport report = identification_check(static_cast<int>(dp.T()), q,
                                                     static_cast<int>(dp.m()), static_cast<int>(dp.K()));
  if (!report.necessary_ok) throw Error(ErrorCode::NotIdentified, report.message);
  if (dp.n() <= dp.m())
    throw Error(ErrorCode::NotIdentified, "need more units than regressor-stack columns");
  PieEstimate est = detail::fit_factor_model(dp, q, opts, FactorCriterion::Projected);
  est.identification = std::move(report);
  return est;
}

inline PieEstimate pie_fit(const PanelDataset& panel, int q, const FitOptions& opts = {}) {
  opts.validate();
  return pie_fit(cross_section_demean(panel, opts.prune_tol), q, opts);
}

/// Large-T least-squares factor estimator: same alternation with E'E as
/// the eigen criterion. No bias correction is applied.
inline PieEstimate ls_factor_fit(const DemeanedPanel& dp, int q, const FitOptions& opts = {}) {
  opts.validate();
  if (q < 1 || q >= dp.T()) throw Error(ErrorCode::NotIdentified, "need 1 <= q < T");
  PieEstimate est = detail::fit_factor_model(dp, q, opts, FactorCriterion::Unrestricted);
  est.identification = identification_check(static_cast<int>(dp.T()), q, static_cast<int>(dp.m()),
                                            static_cast<int>(dp.K()));
  return est;
}

inline PieEstimate ls_factor_fit(const PanelDataset& panel, int q, const FitOptions& opts = {}) {
  opts.validate();
  return ls_factor_fit(cross_section_demean(panel, opts.prune_tol), q, opts);
}

}  // namespace pie
