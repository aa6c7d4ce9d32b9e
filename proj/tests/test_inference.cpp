// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>

#include "oracles.hpp"
#include "pie/pie.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using pie::ErrorCode;

namespace {

template <class F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const pie::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected pie::Error";
  return ErrorCode::InvalidInput;
}

void expect_symmetric_psd(const MatrixXd& c) {
  EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + c.cwiseAbs().maxCoeff()));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * std::abs(c.trace()));
}

struct Fitted {
  pie::PanelDataset panel;
  pie::DemeanedPanel dp;
  pie::PieEstimate est;
  pie::TwfeEstimate fe;
};

Fitted fitted_model1(int n, double s, std::uint64_t rep) {
  pie::mc::Dgp1Config cfg;
  cfg.n = n;
  cfg.s = s;
  Fitted f;
  f.panel = pie::mc::gen_model1(cfg, rep);
  f.dp = pie::cross_section_demean(f.panel);
  f.est = pie::pie_fit(f.dp, 1);
  f.fe = pie::twfe_fit(f.panel);
  return f;
}

}  // namespace

TEST(ChiSquareSf, ZeroArgument) {
  for (int k = 1; k < 40; ++k) EXPECT_EQ(pie::chi_square_sf(0.0, k), 1.0);
}

TEST(ChiSquareSf, TwoDegreesClosedForm) {
  for (double x = 0.0; x < 80.0; x += 0.173) EXPECT_NEAR(pie::chi_square_sf(x, 2), std::exp(-x / 2.0), 1e-12);
}

TEST(ChiSquareSf, FivePercentCriticalValue) { EXPECT_NEAR(pie::chi_square_sf(3.8415, 1), 0.05, 1e-3); }

TEST(ChiSquareSf, MatchesIncompleteGammaReference) {
  for (int df = 1; df <= 40; ++df)
    for (double x = 0.01; x < 150.0; x *= 1.17)
      EXPECT_NEAR(pie::chi_square_sf(x, df), boost::math::gamma_q(0.5 * df, 0.5 * x), 1e-10) << df << " " << x;
}

TEST(ChiSquareSf, RejectsBadArguments) {
  EXPECT_EQ(error_code_of([] { (void)pie::chi_square_sf(-1.0, 1); }), ErrorCode::InvalidInput);
  EXPECT_EQ(error_code_of([] { (void)pie::chi_square_sf(1.0, 0); }), ErrorCode::InvalidInput);
}

TEST(BuildScores, SmallestLayout) {
  // T = 2, K = 1, m = 1, q = 1: rows [x1, z, 0; x2, lambda2 z, theta z]
  pie::DemeanedPanel dp;
  dp.y = MatrixXd(2, 2);
  dp.y << 1.0, -2.0, -1.0, 2.0;
  dp.x = {MatrixXd(2, 2)};
  dp.x[0] << 0.5, 1.5, -0.5, -1.5;
  dp.z = MatrixXd(2, 1);
  dp.z << 0.8, -0.8;
  dp.column_map = {{1, 0}};
  pie::PieEstimate est;
  est.beta = VectorXd::Constant(1, 0.3);
  MatrixXd lam(2, 1);
  lam << 1.0, 1.7;
  est.loadings = pie::FactorLoadings::from_matrix(lam);
  est.theta = MatrixXd::Constant(1, 1, -0.6);
  const auto s = pie::build_scores(dp, est, est.beta);
  ASSERT_EQ(s.p(), 3);
  const MatrixXd& r = s.R_hat[0];
  ASSERT_EQ(r.rows(), 2);
  ASSERT_EQ(r.cols(), 3);
  const double z = 0.8, th = -0.6;
  EXPECT_NEAR(r(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(r(0, 1), z, 1e-15);
  EXPECT_NEAR(r(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(r(1, 0), 1.5, 1e-15);
  EXPECT_NEAR(r(1, 1), 1.7 * z, 1e-12);
  EXPECT_NEAR(r(1, 2), th * z, 1e-15);
  // residual u = y - x beta - lambda theta z
  EXPECT_NEAR(s.u_hat[0](0), 1.0 - 0.15 - th * z, 1e-12);
  EXPECT_NEAR(s.u_hat[0](1), -2.0 - 0.45 - 1.7 * th * z, 1e-12);
  // augmented block
  ASSERT_EQ(s.R_plus[0].rows(), 4);
  ASSERT_EQ(s.R_plus[0].cols(), 4);
  EXPECT_NEAR(s.R_plus[0](2, 3), -0.5, 1e-15);
  EXPECT_NEAR(s.R_plus[0](3, 3), 0.5, 1e-15);
  EXPECT_EQ(s.R_plus[0].topRightCorner(2, 1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.R_plus[0].bottomLeftCorner(2, 3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BuildScores, ExactFitResidualsVanish) {
  oracle::Gen g(51);
  const auto d = oracle::ie_design(g, 60, 4, 1, 0.0, 0.0);
  const auto dp = pie::cross_section_demean(d.panel);
  pie::FitOptions opts;
  opts.tol = 1e-13;
  const auto est = pie::pie_fit(dp, 1, opts);
  ASSERT_TRUE(est.converged);
  const auto s = pie::build_scores(dp, est, est.beta);
  for (const auto& u : s.u_hat) EXPECT_LT(u.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(BuildScores, DimensionMismatch) {
  const auto f = fitted_model1(100, 1.0, 0);
  EXPECT_EQ(error_code_of([&] { (void)pie::build_scores(f.dp, f.est, VectorXd::Zero(3)); }), ErrorCode::DimensionMismatch);
  auto bad = f.est;
  bad.theta = MatrixXd::Zero(2, 1);
  EXPECT_EQ(error_code_of([&] { (void)pie::build_scores(f.dp, bad, f.est.beta); }), ErrorCode::DimensionMismatch);
}

TEST(BuildScores, FirstOrderConditionAtConvergence) {
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const auto f = fitted_model1(300, rep % 2 ? 1.0 : 0.3, rep);
    ASSERT_TRUE(f.est.converged);
    const auto s = pie::build_scores(f.dp, f.est, f.est.beta);
    VectorXd grad = VectorXd::Zero(s.p());
    for (Eigen::Index i = 0; i < s.n(); ++i) grad += s.R_hat[static_cast<std::size_t>(i)].transpose() * s.u_hat[static_cast<std::size_t>(i)];
    grad /= static_cast<double>(s.n());
    const double scale = 1.0 + f.dp.y.cwiseAbs().maxCoeff();
    EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-6 * scale);
  }
}

TEST(PieVcov, CollapsesWhenAEqualsH) {
  pie::ScoreMatrixSet s;
  s.K = 1;
  s.T = 1;
  oracle::Gen g(52);
  double h = 0.0;
  const int n = 25;
  for (int i = 0; i < n; ++i) {
    const double r = g.normal();
    h += r * r;
    s.R_hat.push_back(MatrixXd::Constant(1, 1, r));
    s.u_hat.push_back(VectorXd::Constant(1, i % 2 ? 1.0 : -1.0));
  }
  h /= n;
  const auto c = pie::pie_vcov(s);
  EXPECT_NEAR(c.A(0, 0), c.H(0, 0), 1e-14);
  EXPECT_NEAR(c.cov(0, 0), 1.0 / (h * n), 1e-14);
}

TEST(PieVcov, SandwichIdentityAndPsd) {
  const auto f = fitted_model1(400, 1.0, 3);
  const auto s = pie::build_scores(f.dp, f.est, f.est.beta);
  const auto c = pie::pie_vcov(s);
  const MatrixXd hi = c.H.inverse();
  EXPECT_LT((c.cov - hi * c.A * hi / 400.0).cwiseAbs().maxCoeff(), 1e-10 * c.cov.cwiseAbs().maxCoeff());
  expect_symmetric_psd(c.H);
  expect_symmetric_psd(c.A);
  expect_symmetric_psd(c.cov);
  const auto cc = pie::pie_vcov(s, pie::CovarianceOptions{true});
  EXPECT_NEAR(cc.cov(0, 0) / c.cov(0, 0), 400.0 / 399.0, 1e-12);
}

TEST(PieVcov, DuplicatingUnitsHalvesCovariance) {
  const auto f = fitted_model1(200, 1.0, 4);
  pie::PanelDataset twice = f.panel;
  const Eigen::Index n = f.panel.n();
  twice.y.conservativeResize(2 * n, Eigen::NoChange);
  twice.y.bottomRows(n) = f.panel.y;
  for (auto& x : twice.x) {
    const MatrixXd top = x;
    x.conservativeResize(2 * n, Eigen::NoChange);
    x.bottomRows(n) = top;
  }
  for (Eigen::Index i = 0; i < n; ++i) twice.unit_ids.push_back("dup" + std::to_string(i));
  const auto dp2 = pie::cross_section_demean(twice);
  const auto c1 = pie::pie_vcov(pie::build_scores(f.dp, f.est, f.est.beta));
  const auto c2 = pie::pie_vcov(pie::build_scores(dp2, f.est, f.est.beta));
  EXPECT_LT((c2.cov * 2.0 - c1.cov).cwiseAbs().maxCoeff(), 1e-10 * c1.cov.cwiseAbs().maxCoeff());
}

TEST(PieVcov, SingularH) {
  pie::ScoreMatrixSet s;
  s.K = 2;
  s.T = 2;
  oracle::Gen g(53);
  for (int i = 0; i < 10; ++i) {
    MatrixXd r = g.matrix(2, 2);
    r.col(1).setZero();
    s.R_hat.push_back(r);
    s.u_hat.push_back(g.matrix(2, 1));
  }
  EXPECT_EQ(error_code_of([&] { (void)pie::pie_vcov(s); }), ErrorCode::SingularH);
}

TEST(JointVcov, BlockStructureAndTwfeBlock) {
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto f = fitted_model1(300, 0.5, rep);
    const auto s = pie::build_scores(f.dp, f.est, f.fe.beta);
    const auto j = pie::joint_vcov(s, f.dp);
    const Eigen::Index p = s.p(), K = s.K;
    ASSERT_EQ(j.cov.rows(), p + K);
    EXPECT_EQ(j.H.topRightCorner(p, K).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(j.H.bottomLeftCorner(K, p).cwiseAbs().maxCoeff(), 0.0);
    const MatrixXd fe_block = j.cov.bottomRightCorner(K, K);
    EXPECT_LT((fe_block - f.fe.vcov).cwiseAbs().maxCoeff(), 1e-10 * f.fe.vcov.cwiseAbs().maxCoeff());
    const auto pv = pie::pie_vcov(s);
    EXPECT_LT((j.cov.topLeftCorner(p, p) - pv.cov).cwiseAbs().maxCoeff(), 1e-10 * pv.cov.cwiseAbs().maxCoeff());
    expect_symmetric_psd(j.cov);
  }
}

TEST(HausmanTest, IdenticalEstimatesGiveZero) {
  const auto f = fitted_model1(200, 1.0, 5);
  const auto s = pie::build_scores(f.dp, f.est, f.fe.beta);
  const auto j = pie::joint_vcov(s, f.dp);
  pie::TwfeEstimate same = f.fe;
  same.beta = f.est.beta;
  const auto r = pie::hausman_test(f.est, same, j);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.df, 2);
}

TEST(HausmanTest, StatisticConsistentWithPValue) {
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto f = fitted_model1(300, 0.5 * static_cast<double>(rep % 3), rep);
    const auto s = pie::build_scores(f.dp, f.est, f.fe.beta);
    const auto r = pie::hausman_test(f.est, f.fe, pie::joint_vcov(s, f.dp));
    EXPECT_GE(r.statistic, 0.0);
    EXPECT_DOUBLE_EQ(r.p_value, pie::chi_square_sf(r.statistic, 2));
    const VectorXd d = f.est.beta - f.fe.beta;
    EXPECT_LT((r.contrast - d).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(r.statistic, d.dot(r.contrast_cov.inverse() * d), 1e-8 * (1.0 + r.statistic));
  }
}

TEST(HausmanTest, RestrictedToOneFactor) {
  oracle::Gen g(54);
  const auto d = oracle::ie_design(g, 200, 5, 1, 1.0, 1.0);
  const auto dp = pie::cross_section_demean(d.panel);
  const auto est = pie::pie_fit(dp, 2);
  const auto fe = pie::twfe_fit(d.panel);
  const auto j = pie::joint_vcov(pie::build_scores(dp, est, fe.beta), dp);
  EXPECT_EQ(error_code_of([&] { (void)pie::hausman_test(est, fe, j); }), ErrorCode::UnsupportedFactorCount);
}

TEST(HausmanTest, SingularContrastAbstains) {
  const auto f = fitted_model1(100, 1.0, 6);
  const Eigen::Index dim = 2 + 8 + 3 + 2;
  const MatrixXd zero = MatrixXd::Zero(dim, dim);
  EXPECT_EQ(error_code_of([&] { (void)pie::hausman_test(f.est, f.fe, zero); }), ErrorCode::SingularContrastCov);
}

TEST(HausmanTest, InvariantToUnitOrderAndColumnRelabeling) {
  oracle::Gen g(55);
  for (std::uint64_t rep = 0; rep < 4; ++rep) {
    const auto f = fitted_model1(250, 1.0, 10 + rep);
    const auto base = pie::run_specification_test(f.panel);
    const auto perm = oracle::random_permutation(g, f.panel.n());
    const auto moved = pie::run_specification_test(oracle::permute_units(f.panel, perm));
    EXPECT_NEAR(base.test.statistic, moved.test.statistic, 1e-8 * (1.0 + base.test.statistic));

    // reorder the z columns by hand and refit
    pie::DemeanedPanel dp = pie::cross_section_demean(f.panel);
    const auto cperm = oracle::random_permutation(g, dp.m());
    pie::DemeanedPanel dq = dp;
    for (std::size_t j = 0; j < cperm.size(); ++j) {
      dq.z.col(static_cast<Eigen::Index>(j)) = dp.z.col(cperm[j]);
      dq.column_map[j] = dp.column_map[static_cast<std::size_t>(cperm[j])];
    }
    dq.z_basis = pie::linalg::orthonormal_basis(dq.z);
    const auto e1 = pie::pie_fit(dp, 1), e2 = pie::pie_fit(dq, 1);
    const auto fe = pie::twfe_fit(f.panel);
    const auto t1 = pie::hausman_test(e1, fe, pie::joint_vcov(pie::build_scores(dp, e1, fe.beta), dp));
    const auto t2 = pie::hausman_test(e2, fe, pie::joint_vcov(pie::build_scores(dq, e2, fe.beta), dq));
    EXPECT_NEAR(t1.statistic, t2.statistic, 1e-8 * (1.0 + t1.statistic));
    for (std::size_t j = 0; j < cperm.size(); ++j)
      EXPECT_NEAR(e2.theta(static_cast<Eigen::Index>(j), 0), e1.theta(cperm[j], 0), 1e-8);
  }
}

TEST(SpecificationRun, CenteringChoiceRuns) {
  const auto f = fitted_model1(300, 1.0, 7);
  const auto a = pie::run_specification_test(f.panel, {}, pie::ResidualCentering::Twfe);
  const auto b = pie::run_specification_test(f.panel, {}, pie::ResidualCentering::Pie);
  EXPECT_TRUE(a.pie.vcov.has_value());
  EXPECT_GT(a.test.statistic, 0.0);
  EXPECT_GT(b.test.statistic, 0.0);
  EXPECT_NE(a.test.statistic, b.test.statistic);
}
