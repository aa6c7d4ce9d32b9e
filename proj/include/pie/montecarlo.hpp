// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "pie/error.hpp"
#include "pie/estimators.hpp"
#include "pie/inference.hpp"
#include "pie/linalg.hpp"
#include "pie/panel.hpp"
#include "pie/random.hpp"

namespace pie::mc {

inline constexpr int kModel2Horizon = 16;

/// Two regressors, one factor, AR(1) errors.
struct Dgp1Config {
  int n = 1000;
  int T = 4;
  Eigen::Vector2d beta{-1.0, 1.0};
  double rho = 0.8;
  double error_scale = 1.4;
  double innovation_scale = 0.5;
  double factor_scale = 2.0;
  double s = 1.0;
  std::uint64_t seed = 0;
  /// Time effects; empty means zero.
  std::vector<double> delta;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, "model 1: " + m); };
    if (n < 2) bad("n must be >= 2");
    if (T < 2) bad("T must be >= 2");
    if (!(s >= 0.0 && s <= 1.0)) bad("s must lie in [0, 1]");
    if (!(error_scale > 0.0 && innovation_scale > 0.0 && factor_scale > 0.0)) bad("scales must be positive");
    if (!std::isfinite(rho)) bad("rho must be finite");
    if (!delta.empty() && static_cast<int>(delta.size()) != T) bad("delta must have T entries");
  }

  /// phi_t = 1 - (t - 1) / T.
  [[nodiscard]] Eigen::VectorXd phi() const {
    Eigen::VectorXd p(T);
    for (int t = 0; t < T; ++t) p(t) = 1.0 - static_cast<double>(t) / T;
    return p;
  }
};

inline std::vector<double> default_phi_star() {
  std::vector<double> v(kModel2Horizon);
  for (int t = 1; t <= kModel2Horizon; ++t) v[t - 1] = 1.0 + 1.5 / (1.0 + std::exp(-(t - 9.0)));
  return v;
}

inline std::vector<double> default_delta() {
  std::vector<double> v(kModel2Horizon);
  for (int t = 1; t <= kModel2Horizon; ++t) v[t - 1] = 0.15 * (t - 1);
  return v;
}

/// Staggered binary adoption over a 16-period horizon, observed on a
/// centred window of T periods.
struct Dgp2Config {
  int n = 1000;
  int T = 4;
  double beta1 = 1.0;
  double rho = 0.9;
  double p_adopt8 = 0.93;
  double p_adopt9 = 0.69;
  std::vector<double> phi_star = default_phi_star();
  std::vector<double> delta = default_delta();
  double s = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, "model 2: " + m); };
    if (T != 4 && T != 8 && T != 16) bad("T must be one of 4, 8, 16");
    if (n < 2) bad("n must be >= 2");
    if (!(s >= 0.0 && s <= 1.0)) bad("s must lie in [0, 1]");
    if (!(p_adopt8 >= 0.0 && p_adopt8 <= 1.0 && p_adopt9 >= 0.0 && p_adopt9 <= 1.0))
      bad("adoption probabilities must lie in [0, 1]");
    if (!(std::abs(rho) < 1.0)) bad("|rho| must be < 1");
    if (phi_star.size() != kModel2Horizon || delta.size() != kModel2Horizon)
      bad("phi_star and delta must have 16 entries");
  }

  /// First observed period (1-based).
  [[nodiscard]] int first_period() const { return (kModel2Horizon - T) / 2 + 1; }

  [[nodiscard]] std::vector<int> window() const {
    std::vector<int> w(static_cast<std::size_t>(T));
    for (int j = 0; j < T; ++j) w[static_cast<std::size_t>(j)] = first_period() + j;
    return w;
  }

  /// Loadings over the window: s phi*_t + (1 - s) phi*_{t1}.
  [[nodiscard]] Eigen::VectorXd phi() const {
    const int t1 = first_period();
    Eigen::VectorXd p(T);
    for (int j = 0; j < T; ++j)
      p(j) = s * phi_star[static_cast<std::size_t>(t1 + j - 1)] + (1.0 - s) * phi_star[static_cast<std::size_t>(t1 - 1)];
    return p;
  }
};

using DgpConfig = std::variant<Dgp1Config, Dgp2Config>;

inline PanelDataset gen_model1(const Dgp1Config& cfg, std::uint64_t rep) {
  cfg.validate();
  using random::KeyedStream;
  using random::Role;
  const int n = cfg.n, T = cfg.T;
  const Eigen::VectorXd phi = cfg.phi();
  Eigen::MatrixXd y(n, T), x1(n, T), x2(n, T);
  for (int i = 0; i < n; ++i) {
    const auto unit = static_cast<std::uint64_t>(i);
    const KeyedStream s_eta(cfg.seed, rep, unit, Role::FactorEffect);
    const KeyedStream s_u1(cfg.seed, rep, unit, Role::RegressorNoise1);
    const KeyedStream s_u2(cfg.seed, rep, unit, Role::RegressorNoise2);
    const KeyedStream s_e0(cfg.seed, rep, unit, Role::InitialError);
    const KeyedStream s_nu(cfg.seed, rep, unit, Role::Innovation);
    const double eta = s_eta.normal(0);
    double eps = s_e0.normal(0);
    for (int t = 0; t < T; ++t) {
      const auto c = static_cast<std::uint64_t>(t);
      if (t > 0) eps = cfg.rho * eps + cfg.innovation_scale * s_nu.normal(c);
      const double a = s_u1.normal(c) + eta;
      const double b = s_u2.normal(c) + (cfg.s * phi(t) + 1.0 - cfg.s) * eta;
      const double d = cfg.delta.empty() ? 0.0 : cfg.delta[static_cast<std::size_t>(t)];
      x1(i, t) = a;
      x2(i, t) = b;
      y(i, t) = cfg.beta(0) * a + cfg.beta(1) * b + d + cfg.factor_scale * phi(t) * eta + cfg.error_scale * eps;
    }
  }
  return make_panel(std::move(y), {std::move(x1), std::move(x2)});
}

inline PanelDataset gen_model2(const Dgp2Config& cfg, std::uint64_t rep) {
  cfg.validate();
  using random::KeyedStream;
  using random::Role;
  const int n = cfg.n, T = cfg.T, t1 = cfg.first_period();
  const Eigen::VectorXd phi = cfg.phi();
  const double innov = std::sqrt(1.0 - cfg.rho * cfg.rho);
  Eigen::MatrixXd y(n, T), x(n, T);
  for (int i = 0; i < n; ++i) {
    const auto unit = static_cast<std::uint64_t>(i);
    const KeyedStream s_eta(cfg.seed, rep, unit, Role::FactorEffect);
    const KeyedStream s_adopt(cfg.seed, rep, unit, Role::Adoption);
    const KeyedStream s_eps(cfg.seed, rep, unit, Role::Innovation);
    const double eta = s_eta.uniform(0) < 0.5 ? 1.0 : 0.0;
    int adoption = 10;
    if (s_adopt.uniform(0) < cfg.p_adopt8 * eta)
      adoption = 8;
    else if (s_adopt.uniform(1) < cfg.p_adopt9)
      adoption = 9;
    double e = 0.0;
    for (int j = 0; j < T; ++j) {
      const int period = t1 + j;
      const double draw = s_eps.normal(static_cast<std::uint64_t>(period));
      e = j == 0 ? draw : cfg.rho * e + innov * draw;
      const double treated = period >= adoption ? 1.0 : 0.0;
      x(i, j) = treated;
      y(i, j) = cfg.delta[static_cast<std::size_t>(period - 1)] + cfg.beta1 * treated + phi(j) * eta + e;
    }
  }
  std::vector<std::string> periods;
  for (int p : cfg.window()) periods.push_back(std::to_string(p));
  return make_panel(std::move(y), {std::move(x)}, {}, std::move(periods));
}

inline PanelDataset generate(const DgpConfig& cfg, std::uint64_t rep) {
  return std::visit(
      [rep](const auto& c) -> PanelDataset {
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, Dgp1Config>)
          return gen_model1(c, rep);
        else
          return gen_model2(c, rep);
      },
      cfg);
}

inline Eigen::VectorXd true_beta(const DgpConfig& cfg) {
  if (const auto* c1 = std::get_if<Dgp1Config>(&cfg)) return c1->beta;
  Eigen::VectorXd b(1);
  b << std::get<Dgp2Config>(cfg).beta1;
  return b;
}

inline double get_s(const DgpConfig& cfg) {
  return std::visit([](const auto& c) { return c.s; }, cfg);
}

inline void set_s(DgpConfig& cfg, double s) {
  std::visit([s](auto& c) { c.s = s; }, cfg);
}

inline void validate(const DgpConfig& cfg) {
  std::visit([](const auto& c) { c.validate(); }, cfg);
}

/// Population ingredients of the large-n TWFE bias. phi is T x q, phi_x
/// holds one q x K matrix per period.
struct PopulationMoments {
  Eigen::MatrixXd phi;
  std::vector<Eigen::MatrixXd> phi_x;
  Eigen::MatrixXd var_eta;
  Eigen::MatrixXd gram_within;
};

/// (gram_within)^{-1} (1/T) sum_t (Phi_t - Phi_bar)' var_eta (phi_t - phi_bar).
inline Eigen::VectorXd analytic_twfe_bias(const PopulationMoments& mom) {
  const Eigen::Index T = mom.phi.rows();
  if (T < 1 || static_cast<Eigen::Index>(mom.phi_x.size()) != T)
    throw Error(ErrorCode::DimensionMismatch, "population moments: phi and phi_x lengths differ");
  const Eigen::Index q = mom.phi.cols();
  const Eigen::Index K = mom.phi_x.front().cols();
  if (mom.var_eta.rows() != q || mom.var_eta.cols() != q || mom.gram_within.rows() != K ||
      mom.gram_within.cols() != K)
    throw Error(ErrorCode::DimensionMismatch, "population moments: inconsistent shapes");
  Eigen::MatrixXd phix_bar = Eigen::MatrixXd::Zero(q, K);
  for (const auto& p : mom.phi_x) phix_bar += p;
  phix_bar /= static_cast<double>(T);
  const Eigen::RowVectorXd phi_bar = mom.phi.colwise().mean();
  Eigen::VectorXd num = Eigen::VectorXd::Zero(K);
  for (Eigen::Index t = 0; t < T; ++t)
    num += (mom.phi_x[static_cast<std::size_t>(t)] - phix_bar).transpose() * mom.var_eta *
           (mom.phi.row(t) - phi_bar).transpose();
  num /= static_cast<double>(T);
  return linalg::solve_symmetric(mom.gram_within, num, 1e-12, ErrorCode::SingularGram, "within Gram matrix");
}

inline PopulationMoments model1_moments(const Dgp1Config& cfg) {
  cfg.validate();
  const int T = cfg.T;
  const Eigen::VectorXd phi = cfg.phi();
  PopulationMoments m;
  m.phi = cfg.factor_scale * phi;
  m.var_eta = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd loads(T, 2);
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd p(1, 2);
    p << 1.0, cfg.s * phi(t) + 1.0 - cfg.s;
    m.phi_x.push_back(p);
    loads.row(t) = p.row(0);
  }
  const Eigen::MatrixXd dev = loads.rowwise() - loads.colwise().mean();
  m.gram_within = dev.transpose() * dev / T + (1.0 - 1.0 / T) * Eigen::MatrixXd::Identity(2, 2);
  return m;
}

/// Exact moments by enumerating the (eta, adoption period) cells.
inline PopulationMoments model2_moments(const Dgp2Config& cfg) {
  cfg.validate();
  const int T = cfg.T, t1 = cfg.first_period();
  struct Cell {
    double prob;
    double eta;
    int adoption;
  };
  const double a8 = cfg.p_adopt8, a9 = cfg.p_adopt9;
  const std::vector<Cell> cells = {
      {0.5 * a8, 1.0, 8},
      {0.5 * (1.0 - a8) * a9, 1.0, 9},
      {0.5 * (1.0 - a8) * (1.0 - a9), 1.0, 10},
      {0.5 * a9, 0.0, 9},
      {0.5 * (1.0 - a9), 0.0, 10},
  };
  auto path = [&](int adoption) {
    Eigen::VectorXd v(T);
    for (int j = 0; j < T; ++j) v(j) = (t1 + j) >= adoption ? 1.0 : 0.0;
    return v;
  };
  Eigen::VectorXd mean_x = Eigen::VectorXd::Zero(T);
  Eigen::VectorXd mean_given1 = Eigen::VectorXd::Zero(T);
  Eigen::VectorXd mean_given0 = Eigen::VectorXd::Zero(T);
  for (const Cell& c : cells) {
    mean_x += c.prob * path(c.adoption);
    (c.eta > 0.5 ? mean_given1 : mean_given0) += 2.0 * c.prob * path(c.adoption);
  }
  double gram = 0.0;
  for (const Cell& c : cells) {
    Eigen::VectorXd d = path(c.adoption) - mean_x;
    d.array() -= d.mean();
    gram += c.prob * d.squaredNorm();
  }
  PopulationMoments m;
  m.phi = cfg.phi();
  m.var_eta = Eigen::MatrixXd::Constant(1, 1, 0.25);
  for (int j = 0; j < T; ++j) m.phi_x.push_back(Eigen::MatrixXd::Constant(1, 1, mean_given1(j) - mean_given0(j)));
  m.gram_within = Eigen::MatrixXd::Constant(1, 1, gram / T);
  return m;
}

inline PopulationMoments population_moments(const DgpConfig& cfg) {
  if (const auto* c1 = std::get_if<Dgp1Config>(&cfg)) return model1_moments(*c1);
  return model2_moments(std::get<Dgp2Config>(cfg));
}

enum class EstimatorKind { Twfe, Pie, LsFactor };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Twfe: return "twfe";
    case EstimatorKind::Pie: return "pie";
    case EstimatorKind::LsFactor: return "ls-factor";
  }
  return "unknown";
}

struct McOptions {
  FitOptions fit;
  int q = 1;
  /// Run the TWFE-consistency test in each replication (needs q = 1).
  bool run_test = false;
  double level = 0.05;
  ResidualCentering centering = ResidualCentering::Twfe;
  CovarianceOptions covariance;
};

struct EstimatorOutcome {
  bool ok = false;
  std::string failure;
  Eigen::VectorXd beta;
  /// Empty when the estimator has no covariance.
  Eigen::VectorXd se;
};

struct ReplicationRecord {
  std::uint64_t rep = 0;
  std::vector<EstimatorOutcome> outcomes;
  std::optional<double> statistic;
  std::optional<double> p_value;
  std::string test_failure;
};

struct CoefficientSummary {
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  /// NaN when no standard errors were produced.
  double mean_se = std::numeric_limits<double>::quiet_NaN();
};

struct EstimatorSummary {
  EstimatorKind kind = EstimatorKind::Twfe;
  std::vector<CoefficientSummary> coefficients;
  int valid = 0;
  int failures = 0;
};

struct RejectionPoint {
  double frequency = 0.0;
  int valid = 0;
  int abstained = 0;
};

struct McSummary {
  int reps = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd true_beta;
  std::vector<EstimatorSummary> estimators;
  std::vector<ReplicationRecord> records;
  /// Present when the test was run; keyed by s.
  std::map<double, RejectionPoint> rejection;
};

namespace detail {

inline EstimatorOutcome fit_one(EstimatorKind kind, const PanelDataset& panel, const DemeanedPanel* dp,
                                const McOptions& opts) {
  EstimatorOutcome out;
  try {
    switch (kind) {
      case EstimatorKind::Twfe: {
        const TwfeEstimate e = twfe_fit(panel, opts.covariance.cluster_correction);
        out.beta = e.beta;
        out.se = e.standard_errors();
        break;
      }
      case EstimatorKind::Pie: {
        const PieEstimate e = pie_fit(*dp, opts.q, opts.fit);
        if (!e.converged) throw Error(ErrorCode::InvalidInput, "no convergence");
        const ScoreMatrixSet sc = build_scores(*dp, e, e.beta);
        out.beta = e.beta;
        out.se = pie_vcov(sc, opts.covariance).standard_errors(e.beta.size());
        break;
      }
      case EstimatorKind::LsFactor: {
        const PieEstimate e = ls_factor_fit(*dp, opts.q, opts.fit);
        if (!e.converged) throw Error(ErrorCode::InvalidInput, "no convergence");
        out.beta = e.beta;
        break;
      }
    }
    out.ok = out.beta.allFinite();
    if (!out.ok) out.failure = "non-finite estimate";
  } catch (const std::exception& ex) {
    out.ok = false;
    out.failure = ex.what();
  }
  return out;
}

inline ReplicationRecord run_one(const DgpConfig& cfg, std::uint64_t rep, const std::vector<EstimatorKind>& kinds,
                                 const McOptions& opts) {
  ReplicationRecord rec;
  rec.rep = rep;
  const PanelDataset panel = generate(cfg, rep);
  std::optional<DemeanedPanel> dp;
  std::string dp_failure;
  try {
    dp = cross_section_demean(panel, opts.fit.prune_tol);
  } catch (const std::exception& ex) {
    dp_failure = ex.what();
  }
  for (EstimatorKind k : kinds) {
    if (k != EstimatorKind::Twfe && !dp) {
      rec.outcomes.push_back({false, dp_failure, {}, {}});
      continue;
    }
    rec.outcomes.push_back(fit_one(k, panel, dp ? &*dp : nullptr, opts));
  }
  if (opts.run_test) {
    try {
      const SpecificationTestRun run = run_specification_test(panel, opts.fit, opts.centering, opts.covariance);
      if (!run.pie.converged) throw Error(ErrorCode::InvalidInput, "no convergence");
      rec.statistic = run.test.statistic;
      rec.p_value = run.test.p_value;
    } catch (const std::exception& ex) {
      rec.test_failure = ex.what();
    }
  }
  return rec;
}

/// Runs job(r) for r in [0, count) on up to `workers` threads. Each result
/// lands in its own slot, so the output does not depend on scheduling.
template <class Result, class Job>
std::vector<Result> parallel_map(int count, int workers, Job job) {
  std::vector<Result> out(static_cast<std::size_t>(count));
  const int nthreads = std::clamp(workers, 1, std::max(count, 1));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next.fetch_add(1); r < count; r = next.fetch_add(1)) out[static_cast<std::size_t>(r)] = job(r);
  };
  if (nthreads == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int w = 0; w < nthreads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

inline RejectionPoint tally_rejections(const std::vector<ReplicationRecord>& recs, double level) {
  RejectionPoint pt;
  int rejected = 0;
  for (const auto& r : recs) {
    if (!r.p_value) {
      ++pt.abstained;
      continue;
    }
    ++pt.valid;
    if (*r.p_value < level) ++rejected;
  }
  pt.frequency = pt.valid > 0 ? static_cast<double>(rejected) / pt.valid : std::numeric_limits<double>::quiet_NaN();
  return pt;
}

}  // namespace detail

/// Summary statistics over the successful replications of one estimator.
/// sd and rmse use 1/reps normalization so rmse^2 = bias^2 + sd^2.
inline EstimatorSummary summarize(EstimatorKind kind, std::size_t slot, const std::vector<ReplicationRecord>& recs,
                                  const Eigen::VectorXd& truth) {
  EstimatorSummary es;
  es.kind = kind;
  const Eigen::Index K = truth.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd se_sum = Eigen::VectorXd::Zero(K);
  int se_count = 0;
  for (const auto& r : recs) {
    const auto& o = r.outcomes[slot];
    if (!o.ok) {
      ++es.failures;
      continue;
    }
    ++es.valid;
    sum += o.beta;
    if (o.se.size() == K && o.se.allFinite()) {
      se_sum += o.se;
      ++se_count;
    }
  }
  es.coefficients.resize(static_cast<std::size_t>(K));
  if (es.valid == 0) {
    for (auto& c : es.coefficients) c.bias = c.sd = c.rmse = std::numeric_limits<double>::quiet_NaN();
    return es;
  }
  const Eigen::VectorXd mean = sum / es.valid;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(K);
  for (const auto& r : recs) {
    const auto& o = r.outcomes[slot];
    if (o.ok) ss += (o.beta - mean).cwiseAbs2();
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    auto& c = es.coefficients[static_cast<std::size_t>(k)];
    c.bias = mean(k) - truth(k);
    c.sd = std::sqrt(ss(k) / es.valid);
    c.rmse = std::sqrt(c.bias * c.bias + c.sd * c.sd);
    if (se_count > 0) c.mean_se = se_sum(k) / se_count;
  }
  return es;
}

/// Simulates `reps` panels and fits each requested estimator. The result
/// is a pure function of the configuration, seed and reps.
inline McSummary run_replications(const DgpConfig& cfg, const std::vector<EstimatorKind>& kinds, int reps,
                                  int workers = 1, const McOptions& opts = {}) {
  validate(cfg);
  opts.fit.validate();
  if (reps < 1) throw Error(ErrorCode::ConfigInvalid, "reps must be >= 1");
  McSummary out;
  out.reps = reps;
  out.seed = std::visit([](const auto& c) { return c.seed; }, cfg);
  out.true_beta = true_beta(cfg);
  out.records = detail::parallel_map<ReplicationRecord>(
      reps, workers, [&](int r) { return detail::run_one(cfg, static_cast<std::uint64_t>(r), kinds, opts); });
  for (std::size_t j = 0; j < kinds.size(); ++j)
    out.estimators.push_back(summarize(kinds[j], j, out.records, out.true_beta));
  if (opts.run_test) out.rejection[get_s(cfg)] = detail::tally_rejections(out.records, opts.level);
  return out;
}

/// Rejection frequency of the TWFE-consistency test at each s. Replication r
/// uses the same underlying draws at every s.
inline std::map<double, RejectionPoint> rejection_curve(DgpConfig cfg, const std::vector<double>& s_grid, int reps,
                                                        double level, int workers = 1, McOptions opts = {}) {
  if (s_grid.empty()) throw Error(ErrorCode::ConfigInvalid, "s grid must be nonempty");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::ConfigInvalid, "level must lie in (0, 1)");
  if (reps < 1) throw Error(ErrorCode::ConfigInvalid, "reps must be >= 1");
  opts.run_test = true;
  opts.level = level;
  opts.q = 1;
  std::map<double, RejectionPoint> curve;
  for (double s : s_grid) {
    set_s(cfg, s);
    validate(cfg);
    const auto recs = detail::parallel_map<ReplicationRecord>(
        reps, workers, [&](int r) { return detail::run_one(cfg, static_cast<std::uint64_t>(r), {}, opts); });
    curve[s] = detail::tally_rejections(recs, level);
  }
  return curve;
}

}  // namespace pie::mc
