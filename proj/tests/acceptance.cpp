// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pie/pie.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace mc = pie::mc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Outcome oracle_equivalence() {
  oracle::Gen g(1001);
  double worst_gap = -1e300, worst_beta = 0.0;
  int bad = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = oracle::ie_design(g, 30, 3, 1, 1.0, 1.0);
    const auto dp = pie::cross_section_demean(d.panel);
    if (dp.m() != 3) return {false, "instance " + std::to_string(inst) + " has m = " + std::to_string(dp.m())};
    pie::FitOptions opts;
    opts.n_starts = 5;
    opts.seed = static_cast<std::uint64_t>(inst);
    const auto est = pie::pie_fit(dp, 1, opts);
    const auto ref = oracle::nls_direct(dp, 10, 7u + static_cast<unsigned>(inst));
    const double gap = est.objective - ref.objective;
    const double db = (est.beta - ref.beta).cwiseAbs().maxCoeff();
    worst_gap = std::max(worst_gap, gap);
    worst_beta = std::max(worst_beta, db);
    if (gap > 1e-6 || db > 1e-4) ++bad;
  }
  return {bad == 0, "max S_n gap " + fmt(worst_gap) + ", max |beta diff| " + fmt(worst_beta)};
}

Outcome monotone_descent() {
  oracle::Gen g(1002);
  double worst = -1e300;
  int fits = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index T = g.integer(3, 6), K = g.integer(1, 2);
    const auto d = oracle::ie_design(g, g.integer(30, 200), T, K, g.uniform(0.0, 2.0), g.uniform(0.1, 2.0));
    const auto dp = pie::cross_section_demean(d.panel);
    pie::FitOptions opts;
    opts.init = rep % 2 ? pie::InitStrategy::RandomStart : pie::InitStrategy::TwfeStart;
    opts.seed = static_cast<std::uint64_t>(rep);
    const int q = (T >= 5 && rep % 3 == 0) ? 2 : 1;
    if (!pie::identification_check(T, q, dp.m(), K).necessary_ok) continue;
    const auto est = pie::pie_fit(dp, q, opts);
    ++fits;
    for (std::size_t k = 1; k < est.objective_trace.size(); ++k)
      worst = std::max(worst, est.objective_trace[k] - est.objective_trace[k - 1]);
  }
  return {fits == 100 && worst <= 1e-10, std::to_string(fits) + " fits, largest step increase " + fmt(worst)};
}

Outcome twfe_equivalences() {
  oracle::Gen g(1003);
  double lsdv = 0.0, iota = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = g.panel(g.integer(5, 60), g.integer(2, 6), g.integer(1, 3));
    const VectorXd fe = pie::twfe_fit(p).beta;
    lsdv = std::max(lsdv, (fe - oracle::lsdv_beta(p)).cwiseAbs().maxCoeff());
    const auto dp = pie::cross_section_demean(p);
    const VectorXd bi = pie::beta_step(dp, pie::FactorLoadings::from_matrix(MatrixXd::Ones(p.T(), 1)));
    iota = std::max(iota, (bi - fe).cwiseAbs().maxCoeff());
  }
  return {lsdv <= 1e-10 && iota <= 1e-10, "twfe vs LSDV " + fmt(lsdv) + ", beta_step(iota) vs twfe " + fmt(iota)};
}

Outcome exact_recovery() {
  oracle::Gen g(1004);
  double eb = 0.0, et = 0.0, el = 0.0;
  for (int T : {3, 4})
    for (int rep = 0; rep < 10; ++rep) {
      const auto d = oracle::ie_design(g, 80, T, 1, 0.0, 0.0);
      const auto est = pie::pie_fit(d.panel, 1);
      eb = std::max(eb, (est.beta - d.beta).cwiseAbs().maxCoeff());
      et = std::max(et, (est.theta.col(0) - d.theta).cwiseAbs().maxCoeff());
      el = std::max(el, pie::linalg::subspace_distance(est.loadings.orthonormal, d.lambda));
    }
  return {eb <= 1e-6 && et <= 1e-6 && el <= 1e-6,
          "beta " + fmt(eb) + ", theta " + fmt(et) + ", span " + fmt(el)};
}

mc::McSummary model1_run() {
  mc::Dgp1Config cfg;
  cfg.n = 1000;
  cfg.T = 4;
  return mc::run_replications(cfg, {mc::EstimatorKind::Twfe, mc::EstimatorKind::Pie, mc::EstimatorKind::LsFactor},
                              500);
}

Outcome consistency_direction(const mc::McSummary& s) {
  const double analytic = mc::analytic_twfe_bias(mc::model1_moments(mc::Dgp1Config{}))(1);
  const double fe = s.estimators[0].coefficients[1].bias;
  const double pb = s.estimators[1].coefficients[1].bias;
  const double ls = s.estimators[2].coefficients[1].bias;
  const bool ok = std::abs(pb) < 0.03 && std::abs(fe - analytic) <= 0.02 && std::abs(ls) > std::abs(pb) &&
                  s.estimators[1].valid == 500;
  return {ok, "PIE bias " + fmt(pb) + ", TWFE bias " + fmt(fe) + " (analytic " + fmt(analytic) + "), LS bias " +
                  fmt(ls) + ", PIE failures " + std::to_string(s.estimators[1].failures)};
}

Outcome covariance_calibration(const mc::McSummary& s) {
  const auto& c = s.estimators[1].coefficients[1];
  const double rel = std::abs(c.sd - c.mean_se) / c.mean_se;
  return {rel <= 0.15, "sd " + fmt(c.sd) + ", mean se " + fmt(c.mean_se) + ", relative gap " + fmt(rel)};
}

Outcome size_and_power() {
  mc::Dgp1Config cfg;
  cfg.n = 500;
  const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  const auto curve = mc::rejection_curve(cfg, grid, 1000, 0.05);
  std::ostringstream d;
  bool ok = true;
  double prev = 0.0, prev_var = 0.0;
  bool first = true;
  for (const auto& [s, pt] : curve) {
    d << "s=" << s << ":" << fmt(pt.frequency) << "(" << pt.abstained << " abst) ";
    const double var = pt.frequency * (1.0 - pt.frequency) / std::max(pt.valid, 1);
    if (!first && pt.frequency < prev - 3.0 * std::sqrt(var + prev_var)) ok = false;
    prev = pt.frequency;
    prev_var = var;
    first = false;
  }
  const double size = curve.at(0.0).frequency, power = curve.at(1.0).frequency;
  ok = ok && size >= 0.03 && size <= 0.08 && power > 0.9;
  return {ok, d.str()};
}

Outcome identification_gate() {
  const auto a = pie::identification_check(2, 1, 1, 1);
  const auto b = pie::identification_check(3, 1, 2, 1);
  // the same designs built as data
  oracle::Gen g(1005);
  MatrixXd y2 = g.matrix(40, 2), x2(40, 2);
  // treated group switches on in period 2
  for (int i = 0; i < 40; ++i) x2.row(i) << 0.0, i % 2 ? 1.0 : 0.0;
  bool refused = false;
  try {
    (void)pie::pie_fit(pie::make_panel(y2, {x2}), 1);
  } catch (const pie::Error& e) {
    refused = e.code() == pie::ErrorCode::NotIdentified;
  }
  MatrixXd y3 = g.matrix(40, 3), x3(40, 3);
  // adopters in period 2, adopters in period 3, never treated
  for (int i = 0; i < 40; ++i) x3.row(i) << 0.0, i % 3 == 0 ? 1.0 : 0.0, i % 3 == 2 ? 0.0 : 1.0;
  const auto dp3 = pie::cross_section_demean(pie::make_panel(y3, {x3}));
  bool accepted = true;
  try {
    (void)pie::pie_fit(dp3, 1);
  } catch (const pie::Error&) {
    accepted = false;
  }
  const bool ok = !a.necessary_ok && a.slack < 0 && b.necessary_ok && b.slack == 1 && refused && accepted &&
                  dp3.m() == 2;
  return {ok, "T=2 slack " + std::to_string(a.slack) + ", staggered T=3 slack " + std::to_string(b.slack) +
                  ", data-level m=" + std::to_string(dp3.m())};
}

Outcome numerical_plumbing() {
  double closed = 0.0;
  for (double x = 0.0; x <= 60.0; x += 0.05) closed = std::max(closed, std::abs(pie::chi_square_sf(x, 2) - std::exp(-x / 2)));
  const double crit = pie::chi_square_sf(3.8415, 1);
  oracle::Gen g(1006);
  double eig = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const MatrixXd a = g.symmetric(4);
    const auto [vals, vecs] = oracle::jacobi_eigen(a);
    const auto l = pie::top_loadings(a, 3);
    eig = std::max(eig, (l.eigenvalues - vals).cwiseAbs().maxCoeff());
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double sign = l.orthonormal.col(k).dot(vecs.col(k)) >= 0 ? 1.0 : -1.0;
      eig = std::max(eig, (l.orthonormal.col(k) - sign * vecs.col(k)).cwiseAbs().maxCoeff());
    }
  }
  const bool ok = closed <= 1e-12 && std::abs(crit - 0.05) <= 1e-3 && eig <= 1e-10;
  return {ok, "df=2 gap " + fmt(closed) + ", sf(3.8415,1)=" + fmt(crit) + ", eigen gap " + fmt(eig)};
}

std::string capture(const std::string& cmd, int& status) {
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    status = -1;
    return {};
  }
  std::string text;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) text.append(buf, got);
  status = pclose(pipe);
  return text;
}

Outcome determinism() {
  const std::string base = std::string("\"") + PIE_CLI_PATH +
                           "\" simulate --n 200 --reps 24 --seed 11 --test --records --methods twfe,pie,ls-factor";
  int s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  const std::string a = capture(base + " --workers 1", s1);
  const std::string b = capture(base + " --workers 1", s2);
  const std::string c = capture(base + " --workers 4", s3);
  const std::string d = capture(base + " --s-grid 0,0.5,1 --format csv --workers 3", s4);
  const std::string e = capture(base + " --s-grid 0,0.5,1 --format csv --workers 1", s4);
  const bool ok = s1 == 0 && s2 == 0 && s3 == 0 && s4 == 0 && !a.empty() && a == b && a == c && d == e;
  return {ok, std::to_string(a.size()) + " bytes; repeat " + (a == b ? "same" : "differs") + ", workers 1 vs 4 " +
                  (a == c ? "same" : "differs") + ", curve " + (d == e ? "same" : "differs")};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failed = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << o.detail << " (" << fmt(secs)
              << " s)" << std::endl;
  };
  report(1, "oracle equivalence", oracle_equivalence);
  report(2, "monotone descent", monotone_descent);
  report(3, "TWFE equivalences", twfe_equivalences);
  report(4, "exact recovery", exact_recovery);
  mc::McSummary m1;
  report(5, "consistency direction", [&] {
    m1 = model1_run();
    return consistency_direction(m1);
  });
  report(6, "covariance calibration", [&] {
    if (m1.estimators.empty()) return Outcome{false, "model 1 run unavailable"};
    return covariance_calibration(m1);
  });
  report(7, "test size and power", size_and_power);
  report(8, "identification gate", identification_gate);
  report(9, "numerical plumbing", numerical_plumbing);
  report(10, "determinism", determinism);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
