// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Kept in a header so the test suite can drive it
// in-process.
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pie/pie.hpp"

namespace pie::cli {

using json = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kNotIdentified = 2,
  kSingular = 3,
  kNoConvergence = 4,
  kAbstained = 5,
};

inline int default_workers() {
  if (const char* env = std::getenv("PIE_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (...) {
    }
  }
  return 1;
}

struct RunConfig {
  std::string command;
  std::string config;
  std::string input;
  std::string output;
  std::string method = "pie";
  int q = 1;
  double tol = 1e-8;
  int max_iter = 1000;
  int n_starts = 1;
  std::string init = "twfe";
  std::uint64_t seed = 0;
  double prune_tol = 1e-10;
  bool cluster_correction = false;
  std::string b_estimator = "twfe";
  int model = 1;
  int n = 1000;
  int T = 4;
  int reps = 100;
  double s = 1.0;
  std::vector<double> s_grid;
  double level = 0.05;
  std::vector<std::string> methods{"twfe", "pie", "ls-factor"};
  bool test = false;
  bool records = false;
  std::string emit_panel;
  std::vector<double> phi_star;
  std::vector<double> delta;
  std::string format = "json";
  int workers = default_workers();
};

inline json to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  auto common = [&] {
    j["output"] = c.output;
    j["format"] = c.format;
  };
  auto fit = [&] {
    j["q"] = c.q;
    j["tol"] = c.tol;
    j["max_iter"] = c.max_iter;
    j["n_starts"] = c.n_starts;
    j["init"] = c.init;
    j["seed"] = c.seed;
    j["prune_tol"] = c.prune_tol;
    j["cluster_correction"] = c.cluster_correction;
  };
  if (c.command == "estimate") {
    j["input"] = c.input;
    j["method"] = c.method;
    fit();
  } else if (c.command == "test") {
    j["input"] = c.input;
    fit();
    j["b_estimator"] = c.b_estimator;
    j["level"] = c.level;
  } else {
    j["model"] = c.model;
    j["n"] = c.n;
    j["T"] = c.T;
    j["reps"] = c.reps;
    j["s"] = c.s;
    j["s_grid"] = c.s_grid;
    j["level"] = c.level;
    j["methods"] = c.methods;
    j["test"] = c.test;
    j["records"] = c.records;
    j["emit_panel"] = c.emit_panel;
    j["phi_star"] = c.phi_star;
    j["delta"] = c.delta;
    fit();
    // workers is left out: results do not depend on it.
    j["b_estimator"] = c.b_estimator;
  }
  common();
  return j;
}

/// Applies keys from a JSON config document. Unknown keys are rejected.
inline void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config file must hold a JSON object");
  const std::map<std::string, std::function<void(const json&)>> setters = {
      {"input", [&](const json& v) { c.input = v.get<std::string>(); }},
      {"output", [&](const json& v) { c.output = v.get<std::string>(); }},
      {"method", [&](const json& v) { c.method = v.get<std::string>(); }},
      {"q", [&](const json& v) { c.q = v.get<int>(); }},
      {"tol", [&](const json& v) { c.tol = v.get<double>(); }},
      {"max_iter", [&](const json& v) { c.max_iter = v.get<int>(); }},
      {"n_starts", [&](const json& v) { c.n_starts = v.get<int>(); }},
      {"init", [&](const json& v) { c.init = v.get<std::string>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"prune_tol", [&](const json& v) { c.prune_tol = v.get<double>(); }},
      {"cluster_correction", [&](const json& v) { c.cluster_correction = v.get<bool>(); }},
      {"b_estimator", [&](const json& v) { c.b_estimator = v.get<std::string>(); }},
      {"model", [&](const json& v) { c.model = v.get<int>(); }},
      {"n", [&](const json& v) { c.n = v.get<int>(); }},
      {"T", [&](const json& v) { c.T = v.get<int>(); }},
      {"reps", [&](const json& v) { c.reps = v.get<int>(); }},
      {"s", [&](const json& v) { c.s = v.get<double>(); }},
      {"s_grid", [&](const json& v) { c.s_grid = v.get<std::vector<double>>(); }},
      {"level", [&](const json& v) { c.level = v.get<double>(); }},
      {"methods", [&](const json& v) { c.methods = v.get<std::vector<std::string>>(); }},
      {"test", [&](const json& v) { c.test = v.get<bool>(); }},
      {"records", [&](const json& v) { c.records = v.get<bool>(); }},
      {"emit_panel", [&](const json& v) { c.emit_panel = v.get<std::string>(); }},
      {"phi_star", [&](const json& v) { c.phi_star = v.get<std::vector<double>>(); }},
      {"delta", [&](const json& v) { c.delta = v.get<std::vector<double>>(); }},
      {"format", [&](const json& v) { c.format = v.get<std::string>(); }},
      {"workers", [&](const json& v) { c.workers = v.get<int>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "command") continue;
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception&) {
      throw Error(ErrorCode::ConfigInvalid, "config key '" + key + "' has the wrong type");
    }
  }
}

inline FitOptions fit_options(const RunConfig& c) {
  FitOptions o;
  o.tol = c.tol;
  o.max_iter = c.max_iter;
  o.n_starts = c.n_starts;
  o.seed = c.seed;
  o.prune_tol = c.prune_tol;
  o.init = c.init == "random" ? InitStrategy::RandomStart : InitStrategy::TwfeStart;
  return o;
}

inline void validate(const RunConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (c.q < 1) bad("--q must be >= 1");
  if (c.format != "json" && c.format != "csv") bad("--format must be json or csv");
  if (c.init != "twfe" && c.init != "random") bad("--init must be twfe or random");
  if (c.b_estimator != "twfe" && c.b_estimator != "pie") bad("--b-estimator must be twfe or pie");
  if (!(c.level > 0.0 && c.level < 1.0)) bad("--level must lie in (0, 1)");
  if (c.workers < 1) bad("--workers must be >= 1");
  fit_options(c).validate();
  if (c.command == "estimate" || c.command == "test") {
    if (c.input.empty()) bad("--input is required for " + c.command);
  }
  if (c.command == "estimate" && c.method != "twfe" && c.method != "pie" && c.method != "ls-factor")
    bad("--method must be twfe, pie or ls-factor");
  if (c.command == "test" && c.q != 1)
    bad("the TWFE-consistency test is defined only for a single factor; use --q 1");
  if (c.command == "simulate") {
    if (c.model != 1 && c.model != 2) bad("--model must be 1 or 2");
    if (c.reps < 1) bad("--reps must be >= 1");
    for (const auto& m : c.methods)
      if (m != "twfe" && m != "pie" && m != "ls-factor") bad("unknown method '" + m + "' in --methods");
    for (double s : c.s_grid)
      if (!(s >= 0.0 && s <= 1.0)) bad("--s-grid values must lie in [0, 1]");
    if (c.model == 1 && (!c.phi_star.empty()))
      bad("phi_star applies to model 2 only");
  }
}

inline json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json mat_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

inline json identification_json(const IdentificationReport& r) {
  json j;
  j["T"] = r.T;
  j["q"] = r.q;
  j["m"] = r.m;
  j["K"] = r.K;
  j["slack"] = r.slack;
  j["necessary_ok"] = r.necessary_ok;
  j["message"] = r.message;
  return j;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotIdentified:
    case ErrorCode::AllColumnsPruned:
      return kNotIdentified;
    case ErrorCode::SingularDesign:
    case ErrorCode::NormalizationSingular:
    case ErrorCode::SingularProjection:
    case ErrorCode::SingularH:
    case ErrorCode::SingularGram:
      return kSingular;
    case ErrorCode::SingularContrastCov:
      return kAbstained;
    default:
      return kUsage;
  }
}

inline std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

inline void report(std::ostream& err, const std::string& code, const std::string& msg) {
  err << "error[" << code << "]: " << one_line(msg) << '\n';
}

struct Document {
  json body;
  std::string csv;
};

inline void emit(const RunConfig& c, const Document& doc, std::ostream& out) {
  std::ostringstream text;
  if (c.format == "csv")
    text << doc.csv;
  else
    text << doc.body.dump(2) << '\n';
  if (c.output.empty() || c.output == "-") {
    out << text.str();
    return;
  }
  std::ofstream f(c.output, std::ios::binary);
  if (!f) throw Error(ErrorCode::InvalidInput, "cannot open output file '" + c.output + "'");
  f << text.str();
}

inline std::string csv_num(double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); }

/// Result document for a factor-model fit.
inline Document factor_document(const RunConfig& c, const PanelDataset& panel, const DemeanedPanel& dp,
                                const PieEstimate& est, const std::optional<Eigen::VectorXd>& se) {
  Document d;
  json& j = d.body;
  j["command"] = "estimate";
  j["config"] = to_json(c);
  j["method"] = c.method;
  j["n"] = panel.n();
  j["T"] = panel.T();
  j["K"] = panel.K();
  j["converged"] = est.converged;
  j["iterations"] = est.iterations;
  j["objective"] = est.objective;
  std::ostringstream csvs;
  csvs << "parameter,estimate,std_error\n";
  json coefs = json::array();
  for (Eigen::Index k = 0; k < panel.K(); ++k) {
    json e;
    e["name"] = panel.regressor_names[static_cast<std::size_t>(k)];
    e["estimate"] = est.beta(k);
    e["std_error"] = se ? json((*se)(k)) : json(nullptr);
    csvs << panel.regressor_names[static_cast<std::size_t>(k)] << ',' << csv_num(est.beta(k)) << ','
         << (se ? csv_num((*se)(k)) : std::string()) << '\n';
    coefs.push_back(std::move(e));
  }
  j["coefficients"] = std::move(coefs);
  const Eigen::MatrixXd& lam = est.loadings.normalized();
  json loads = json::array();
  for (Eigen::Index t = 0; t < lam.rows(); ++t) {
    json e;
    e["period"] = panel.period_labels[static_cast<std::size_t>(t)];
    e["lambda"] = vec_json(lam.row(t).transpose());
    for (Eigen::Index k = 0; k < lam.cols(); ++k)
      csvs << "lambda[" << panel.period_labels[static_cast<std::size_t>(t)] << ',' << k + 1 << "]," << csv_num(lam(t, k))
           << ",\n";
    loads.push_back(std::move(e));
  }
  j["loadings"] = std::move(loads);
  j["eigenvalues"] = vec_json(est.loadings.eigenvalues);
  j["degenerate_spectrum"] = est.loadings.degenerate_spectrum;
  json theta = json::array();
  for (Eigen::Index r = 0; r < est.theta.rows(); ++r) {
    json e;
    e["column"] = dp.column_label(r);
    e["theta"] = vec_json(est.theta.row(r).transpose());
    for (Eigen::Index k = 0; k < est.theta.cols(); ++k)
      csvs << "theta[" << dp.column_label(r) << ',' << k + 1 << "]," << csv_num(est.theta(r, k)) << ",\n";
    theta.push_back(std::move(e));
  }
  j["theta"] = std::move(theta);
  j["identification"] = identification_json(est.identification);
  csvs << "objective," << csv_num(est.objective) << ",\n";
  csvs << "iterations," << est.iterations << ",\n";
  csvs << "converged," << (est.converged ? 1 : 0) << ",\n";
  d.csv = csvs.str();
  return d;
}

inline int cmd_estimate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const PanelDataset panel = csv::read_panel_file(c.input);
  if (c.method == "twfe") {
    const TwfeEstimate est = twfe_fit(panel, c.cluster_correction);
    const Eigen::VectorXd se = est.standard_errors();
    Document d;
    d.body["command"] = "estimate";
    d.body["config"] = to_json(c);
    d.body["method"] = "twfe";
    d.body["n"] = panel.n();
    d.body["T"] = panel.T();
    d.body["K"] = panel.K();
    json coefs = json::array();
    std::ostringstream csvs;
    csvs << "parameter,estimate,std_error\n";
    for (Eigen::Index k = 0; k < panel.K(); ++k) {
      json e;
      e["name"] = panel.regressor_names[static_cast<std::size_t>(k)];
      e["estimate"] = est.beta(k);
      e["std_error"] = se(k);
      csvs << panel.regressor_names[static_cast<std::size_t>(k)] << ',' << csv_num(est.beta(k)) << ','
           << csv_num(se(k)) << '\n';
      coefs.push_back(std::move(e));
    }
    d.body["coefficients"] = std::move(coefs);
    d.body["vcov"] = mat_json(est.vcov);
    d.csv = csvs.str();
    emit(c, d, out);
    return kOk;
  }
  const DemeanedPanel dp = cross_section_demean(panel, c.prune_tol);
  const FitOptions opts = fit_options(c);
  if (c.method == "pie") {
    const PieEstimate est = pie_fit(dp, c.q, opts);
    const ScoreMatrixSet sc = build_scores(dp, est, est.beta);
    const SandwichCovariance cov = pie_vcov(sc, CovarianceOptions{c.cluster_correction});
    Document d = factor_document(c, panel, dp, est, cov.standard_errors(panel.K()));
    emit(c, d, out);
    if (!est.converged) {
      report(err, "NoConvergence", "alternating algorithm stopped after " + std::to_string(est.iterations) +
                                       " iterations without meeting tol; result written");
      return kNoConvergence;
    }
    return kOk;
  }
  const PieEstimate est = ls_factor_fit(dp, c.q, opts);
  Document d = factor_document(c, panel, dp, est, std::nullopt);
  emit(c, d, out);
  if (!est.converged) {
    report(err, "NoConvergence", "alternating algorithm stopped after " + std::to_string(est.iterations) +
                                     " iterations without meeting tol; result written");
    return kNoConvergence;
  }
  return kOk;
}

inline int cmd_test(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const PanelDataset panel = csv::read_panel_file(c.input);
  const FitOptions opts = fit_options(c);
  const DemeanedPanel dp = cross_section_demean(panel, c.prune_tol);
  const PieEstimate est = pie_fit(dp, 1, opts);
  const TwfeEstimate fe = twfe_fit(panel, c.cluster_correction);
  const Eigen::VectorXd b = c.b_estimator == "pie" ? est.beta : fe.beta;
  const ScoreMatrixSet sc = build_scores(dp, est, b);
  const SandwichCovariance joint = joint_vcov(sc, dp, CovarianceOptions{c.cluster_correction});

  Document d;
  json& j = d.body;
  j["command"] = "test";
  j["config"] = to_json(c);
  j["n"] = panel.n();
  j["T"] = panel.T();
  j["K"] = panel.K();
  j["pie_beta"] = vec_json(est.beta);
  j["twfe_beta"] = vec_json(fe.beta);
  j["pie_converged"] = est.converged;
  j["identification"] = identification_json(est.identification);
  std::ostringstream csvs;
  int code = kOk;
  try {
    const SpecTestResult r = hausman_test(est, fe, joint);
    j["abstained"] = false;
    j["statistic"] = r.statistic;
    j["df"] = r.df;
    j["p_value"] = r.p_value;
    j["reject"] = r.p_value < c.level;
    j["contrast"] = vec_json(r.contrast);
    j["contrast_cov"] = mat_json(r.contrast_cov);
    csvs << "statistic,df,p_value,reject\n"
         << csv_num(r.statistic) << ',' << r.df << ',' << csv_num(r.p_value) << ',' << (r.p_value < c.level ? 1 : 0)
         << '\n';
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularContrastCov) throw;
    j["abstained"] = true;
    j["reason"] = e.what();
    csvs << "statistic,df,p_value,reject\n,,,\n";
    d.csv = csvs.str();
    emit(c, d, out);
    report(err, std::string(to_string(e.code())), std::string(e.what()) + "; test abstains");
    return kAbstained;
  }
  d.csv = csvs.str();
  emit(c, d, out);
  if (!est.converged) {
    report(err, "NoConvergence", "PIE fit did not converge; statistic written but unreliable");
    code = kNoConvergence;
  }
  return code;
}

inline mc::DgpConfig dgp_from(const RunConfig& c) {
  if (c.model == 1) {
    mc::Dgp1Config d;
    d.n = c.n;
    d.T = c.T;
    d.s = c.s;
    d.seed = c.seed;
    if (!c.delta.empty()) d.delta = c.delta;
    return d;
  }
  mc::Dgp2Config d;
  d.n = c.n;
  d.T = c.T;
  d.s = c.s;
  d.seed = c.seed;
  if (!c.phi_star.empty()) d.phi_star = c.phi_star;
  if (!c.delta.empty()) d.delta = c.delta;
  return d;
}

inline mc::EstimatorKind kind_from(const std::string& m) {
  if (m == "twfe") return mc::EstimatorKind::Twfe;
  if (m == "pie") return mc::EstimatorKind::Pie;
  return mc::EstimatorKind::LsFactor;
}

inline json rejection_json(const std::map<double, mc::RejectionPoint>& curve, std::string& csv_out) {
  json a = json::array();
  std::ostringstream csvs;
  csvs << "s,frequency,valid,abstained\n";
  for (const auto& [s, pt] : curve) {
    json e;
    e["s"] = s;
    e["frequency"] = pt.frequency;
    e["valid"] = pt.valid;
    e["abstained"] = pt.abstained;
    csvs << csv_num(s) << ',' << csv_num(pt.frequency) << ',' << pt.valid << ',' << pt.abstained << '\n';
    a.push_back(std::move(e));
  }
  csv_out = csvs.str();
  return a;
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out, std::ostream& /*err*/) {
  const mc::DgpConfig dgp = dgp_from(c);
  mc::validate(dgp);
  mc::McOptions opts;
  opts.fit = fit_options(c);
  opts.q = c.q;
  opts.level = c.level;
  opts.run_test = c.test;
  opts.centering = c.b_estimator == "pie" ? ResidualCentering::Pie : ResidualCentering::Twfe;
  opts.covariance.cluster_correction = c.cluster_correction;

  if (!c.emit_panel.empty()) csv::write_panel_file(c.emit_panel, mc::generate(dgp, 0));

  Document d;
  json& j = d.body;
  j["command"] = "simulate";
  j["config"] = to_json(c);
  j["model"] = c.model;
  if (const auto* m2 = std::get_if<mc::Dgp2Config>(&dgp)) {
    j["window"] = m2->window();
    j["phi_star"] = m2->phi_star;
    j["delta"] = m2->delta;
  } else {
    std::vector<int> w;
    for (int t = 1; t <= c.T; ++t) w.push_back(t);
    j["window"] = w;
  }
  j["true_beta"] = vec_json(mc::true_beta(dgp));
  try {
    j["analytic_twfe_bias"] = vec_json(mc::analytic_twfe_bias(mc::population_moments(dgp)));
  } catch (const Error&) {
    j["analytic_twfe_bias"] = nullptr;
  }

  if (!c.s_grid.empty()) {
    const auto curve = mc::rejection_curve(dgp, c.s_grid, c.reps, c.level, c.workers, opts);
    j["rejection"] = rejection_json(curve, d.csv);
    emit(c, d, out);
    return kOk;
  }

  std::vector<mc::EstimatorKind> kinds;
  for (const auto& m : c.methods) kinds.push_back(kind_from(m));
  const mc::McSummary sum = mc::run_replications(dgp, kinds, c.reps, c.workers, opts);
  json ests = json::array();
  std::ostringstream csvs;
  csvs << "estimator,coefficient,bias,sd,rmse,mean_se,valid,failures\n";
  for (const auto& e : sum.estimators) {
    json ej;
    ej["estimator"] = mc::to_string(e.kind);
    ej["valid"] = e.valid;
    ej["failures"] = e.failures;
    json coefs = json::array();
    for (std::size_t k = 0; k < e.coefficients.size(); ++k) {
      const auto& cs = e.coefficients[k];
      json cj;
      cj["coefficient"] = "x" + std::to_string(k + 1);
      cj["bias"] = cs.bias;
      cj["sd"] = cs.sd;
      cj["rmse"] = cs.rmse;
      cj["mean_se"] = cs.mean_se;
      csvs << mc::to_string(e.kind) << ",x" << k + 1 << ',' << csv_num(cs.bias) << ',' << csv_num(cs.sd) << ','
           << csv_num(cs.rmse) << ',' << csv_num(cs.mean_se) << ',' << e.valid << ',' << e.failures << '\n';
      coefs.push_back(std::move(cj));
    }
    ej["coefficients"] = std::move(coefs);
    ests.push_back(std::move(ej));
  }
  j["estimators"] = std::move(ests);
  if (c.test) {
    std::string unused;
    j["rejection"] = rejection_json(sum.rejection, unused);
  }
  if (c.records) {
    json recs = json::array();
    for (const auto& r : sum.records) {
      json rj;
      rj["rep"] = r.rep;
      json outs = json::array();
      for (std::size_t k = 0; k < r.outcomes.size(); ++k) {
        json oj;
        oj["estimator"] = mc::to_string(kinds[k]);
        oj["ok"] = r.outcomes[k].ok;
        if (r.outcomes[k].ok)
          oj["beta"] = vec_json(r.outcomes[k].beta);
        else
          oj["failure"] = r.outcomes[k].failure;
        outs.push_back(std::move(oj));
      }
      rj["outcomes"] = std::move(outs);
      if (r.p_value) {
        rj["statistic"] = *r.statistic;
        rj["p_value"] = *r.p_value;
      }
      recs.push_back(std::move(rj));
    }
    j["records"] = std::move(recs);
  }
  d.csv = csvs.str();
  emit(c, d, out);
  return kOk;
}

/// Parses arguments, runs the chosen subcommand and returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interactive fixed effects panel estimation, specification testing and simulation", "pie_cli"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  RunConfig given;  // values parsed from flags
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> bindings;
  auto bind = [&]<class V>(CLI::App* sub, const std::string& flag, V RunConfig::*field, const std::string& desc) {
    CLI::Option* o = sub->add_option(flag, given.*field, desc)->capture_default_str();
    bindings.emplace_back(o, [field, &given](RunConfig& dst) { dst.*field = given.*field; });
    return o;
  };
  auto bind_flag = [&](CLI::App* sub, const std::string& flag, bool RunConfig::*field, const std::string& desc) {
    CLI::Option* o = sub->add_flag(flag, given.*field, desc);
    bindings.emplace_back(o, [field, &given](RunConfig& dst) { dst.*field = given.*field; });
    return o;
  };
  auto fit_flags = [&](CLI::App* sub) {
    bind(sub, "--q", &RunConfig::q, "Number of factors");
    bind(sub, "--tol", &RunConfig::tol, "Convergence tolerance on the max-norm beta change");
    bind(sub, "--max-iter", &RunConfig::max_iter, "Iteration cap for the alternating algorithm");
    bind(sub, "--n-starts", &RunConfig::n_starts, "Number of starting values (first is TWFE-based)");
    bind(sub, "--init", &RunConfig::init, "Initialization: twfe or random");
    bind(sub, "--seed", &RunConfig::seed, "Seed for random starts and simulation");
    bind(sub, "--prune-tol", &RunConfig::prune_tol, "Collinearity tolerance when pruning the regressor stack");
    bind_flag(sub, "--cluster-correction", &RunConfig::cluster_correction, "Apply the n/(n-1) covariance factor");
  };
  auto io_flags = [&](CLI::App* sub) {
    bind(sub, "--output,-o", &RunConfig::output, "Output path (default: stdout)");
    bind(sub, "--format", &RunConfig::format, "Output format: json or csv");
    bind(sub, "--config", &RunConfig::config, "JSON config file; flags given explicitly take precedence");
  };

  CLI::App* est = app.add_subcommand("estimate", "Fit TWFE, PIE or least-squares factor model to a panel CSV");
  bind(est, "--input,-i", &RunConfig::input, "Long-format CSV: unit,period,y,x1..xK");
  bind(est, "--method", &RunConfig::method, "twfe, pie or ls-factor");
  fit_flags(est);
  io_flags(est);

  CLI::App* tst = app.add_subcommand("test", "Test consistency of TWFE against the PIE estimator (single factor)");
  bind(tst, "--input,-i", &RunConfig::input, "Long-format CSV: unit,period,y,x1..xK");
  bind(tst, "--b-estimator", &RunConfig::b_estimator, "Centering estimator for the TWFE scores: twfe or pie");
  bind(tst, "--level", &RunConfig::level, "Nominal level for the reject flag");
  fit_flags(tst);
  io_flags(tst);

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo replications or rejection curves");
  bind(sim, "--model", &RunConfig::model, "Data generating process: 1 or 2");
  bind(sim, "--n", &RunConfig::n, "Units per panel");
  bind(sim, "--T", &RunConfig::T, "Observed periods (model 2: 4, 8 or 16)");
  bind(sim, "--reps", &RunConfig::reps, "Replications");
  bind(sim, "--s", &RunConfig::s, "Interference parameter in [0, 1]");
  bind(sim, "--s-grid", &RunConfig::s_grid, "Comma-separated s values; runs a rejection curve")->delimiter(',');
  bind(sim, "--level", &RunConfig::level, "Nominal test level");
  bind(sim, "--methods", &RunConfig::methods, "Comma-separated estimators: twfe,pie,ls-factor")->delimiter(',');
  bind_flag(sim, "--test", &RunConfig::test, "Also run the consistency test in each replication");
  bind_flag(sim, "--records", &RunConfig::records, "Include per-replication estimates in JSON output");
  bind(sim, "--emit-panel", &RunConfig::emit_panel, "Write replication 0's panel as CSV to this path");
  bind(sim, "--b-estimator", &RunConfig::b_estimator, "Centering estimator for the TWFE scores: twfe or pie");
  bind(sim, "--workers", &RunConfig::workers, "Worker threads (default from PIE_WORKERS, else 1)");
  fit_flags(sim);
  io_flags(sim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    report(err, "Usage", e.what());
    return kUsage;
  }

  RunConfig cfg;
  for (CLI::App* sub : {est, tst, sim})
    if (sub->parsed()) cfg.command = sub->get_name();
  try {
    for (auto& [opt, apply] : bindings)
      if (opt->get_name() == "--config" && opt->count() > 0) apply(cfg);
    if (!cfg.config.empty()) {
      std::ifstream f(cfg.config);
      if (!f) throw Error(ErrorCode::ConfigInvalid, "cannot open config file '" + cfg.config + "'");
      json j;
      try {
        j = json::parse(f);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("config file is not valid JSON: ") + e.what());
      }
      apply_json(cfg, j);
    }
    for (auto& [opt, apply] : bindings)
      if (opt->count() > 0) apply(cfg);
    validate(cfg);
    if (cfg.command == "estimate") return cmd_estimate(cfg, out, err);
    if (cfg.command == "test") return cmd_test(cfg, out, err);
    return cmd_simulate(cfg, out, err);
  } catch (const Error& e) {
    report(err, std::string(to_string(e.code())), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report(err, "Internal", e.what());
    return kUsage;
  }
}

}  // namespace pie::cli
