#pragma once

#include <json.hpp>
#include <sstream>
#include <string>

#include "dyniv/characterization.hpp"
#include "dyniv/csv.hpp"
#include "dyniv/estimators.hpp"
#include "dyniv/regression.hpp"
#include "dyniv/simulation.hpp"

namespace dyniv {

using json = nlohmann::ordered_json;

namespace detail {

inline json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i)
    a.push_back(std::isnan(v[i]) ? json(nullptr) : json(v[i]));
  return a;
}

inline json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (long j = 0; j < m.cols(); ++j)
      r.push_back(std::isnan(m(i, j)) ? json(nullptr) : json(m(i, j)));
    rows.push_back(r);
  }
  return rows;
}

inline json num_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimates and tests
// ---------------------------------------------------------------------------

inline json to_json(const TestResult& t) {
  const char* kind = t.kind == TestKind::wald      ? "wald"
                     : t.kind == TestKind::hansen_j ? "hansen_j"
                                                    : "hausman";
  return json{{"stat", t.statistic}, {"dof", t.dof}, {"p", t.p_value}, {"kind", kind}};
}

inline json to_json(const EstimateTable& e) {
  json se = json::array();
  for (long i = 0; i < e.coef.size(); ++i) se.push_back(e.se(static_cast<int>(i)));
  return json{{"names", e.names},
              {"coef", detail::vec_to_json(e.coef)},
              {"se", se},
              {"vcov", detail::mat_to_json(e.vcov)},
              {"n_obs", e.n_obs},
              {"n_clusters", e.n_clusters},
              {"meta",
               {{"kind", e.meta.kind},
                {"instruments", e.meta.instruments},
                {"wave_lo", e.meta.wave_lo},
                {"wave_hi", e.meta.wave_hi},
                {"notes", e.meta.notes}}}};
}

inline json to_json(const ExposureEffects& fx) {
  json j{{"kind", fx.kind == ExposureKind::incremental ? "incremental" : "cumulative"},
         {"levels", fx.levels},
         {"coef", detail::vec_to_json(fx.level_coef())},
         {"se", detail::vec_to_json(fx.level_se())},
         {"equality_all", fx.equality_all ? to_json(*fx.equality_all) : json(nullptr)},
         {"equality_tail", fx.equality_tail ? to_json(*fx.equality_tail) : json(nullptr)},
         {"notes", fx.notes},
         {"fit", to_json(fx.est)}};
  return j;
}

inline json to_json(const DifferenceResult& d) {
  return json{{"names", d.names},
              {"diff", detail::vec_to_json(d.diff)},
              {"se", detail::vec_to_json(d.se)},
              {"t", detail::vec_to_json(d.t_stat)},
              {"joint", to_json(d.joint)}};
}

// ---------------------------------------------------------------------------
// Wave summary (Table-1 layout)
// ---------------------------------------------------------------------------

inline json to_json(const WaveSummary& s) {
  json rows = json::array();
  for (const auto& r : s.rows)
    rows.push_back(json{{"wave", r.wave},
                        {"control_rate", r.control_rate},
                        {"treated_rate", r.treated_rate},
                        {"first_stage", r.first_stage},
                        {"n_obs_z0", r.n_obs_z0},
                        {"n_obs_z1", r.n_obs_z1},
                        {"y_mean_z0", r.y_mean_z0},
                        {"y_sd_z0", r.y_sd_z0},
                        {"y_mean_z1", r.y_mean_z1},
                        {"y_sd_z1", r.y_sd_z1},
                        {"itt", r.itt},
                        {"itt_se", r.itt_se}});
  return json{{"waves", rows}};
}

inline std::string to_csv(const WaveSummary& s) {
  std::ostringstream o;
  o << "wave,control_rate,treated_rate,first_stage,n_obs_z0,n_obs_z1,"
       "y_mean_z0,y_sd_z0,y_mean_z1,y_sd_z1,itt,itt_se\n";
  for (const auto& r : s.rows)
    o << r.wave << ',' << detail::fmt_double(r.control_rate) << ','
      << detail::fmt_double(r.treated_rate) << ',' << detail::fmt_double(r.first_stage)
      << ',' << r.n_obs_z0 << ',' << r.n_obs_z1 << ','
      << detail::fmt_double(r.y_mean_z0) << ',' << detail::fmt_double(r.y_sd_z0) << ','
      << detail::fmt_double(r.y_mean_z1) << ',' << detail::fmt_double(r.y_sd_z1) << ','
      << detail::fmt_double(r.itt) << ',' << detail::fmt_double(r.itt_se) << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Hausman comparison (Table-2 layout)
// ---------------------------------------------------------------------------

inline json to_json(const HausmanComparison& h) {
  json rows = json::array();
  for (const auto& r : h.rows)
    rows.push_back(json{{"level", r.level},
                        {"iv", r.iv},
                        {"iv_se", r.iv_se},
                        {"ols", r.ols},
                        {"ols_se", r.ols_se},
                        {"diff", r.diff},
                        {"diff_se", r.diff_se},
                        {"t", r.t_stat}});
  return json{{"rows", rows}, {"joint", to_json(h.joint)}};
}

inline std::string to_csv(const HausmanComparison& h) {
  std::ostringstream o;
  o << "exposure_years,iv_2sls,iv_se,ols,ols_se,difference,diff_se,t\n";
  for (const auto& r : h.rows)
    o << r.level << ',' << detail::fmt_double(r.iv) << ',' << detail::fmt_double(r.iv_se)
      << ',' << detail::fmt_double(r.ols) << ',' << detail::fmt_double(r.ols_se) << ','
      << detail::fmt_double(r.diff) << ',' << detail::fmt_double(r.diff_se) << ','
      << detail::fmt_double(r.t_stat) << '\n';
  o << "joint_chi2," << detail::fmt_double(h.joint.statistic) << ",dof," << h.joint.dof
    << ",p," << detail::fmt_double(h.joint.p_value) << ",,\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Group means (Table-3 layout) and IMCO diagnostics
// ---------------------------------------------------------------------------

inline json to_json(const GroupMeansTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back(json{
        {"covariate", r.covariate},
        {"wave", r.wave},
        {"sample_mean", r.sample_mean},
        {"sample_mean_se", r.sample_mean_se},
        {"immediate_complier", r.immediate_complier},
        {"immediate_complier_se", r.immediate_complier_se},
        {"any_exposure_complier", r.any_complier},
        {"any_exposure_complier_se", r.any_complier_se},
        {"at_share_treated", r.at_share_treated},
        {"immediate_at", r.immediate_at_defined ? json(r.immediate_at) : json(nullptr)},
        {"immediate_at_se",
         r.immediate_at_defined ? json(r.immediate_at_se) : json(nullptr)},
        {"marginal_at", r.marginal_at_defined ? json(r.marginal_at) : json(nullptr)},
        {"marginal_at_se", r.marginal_at_defined ? json(r.marginal_at_se) : json(nullptr)},
        {"pi", r.marginal_at_defined ? json(r.pi) : json(nullptr)},
        {"any_at_share_treated", r.any_at_share_treated},
        {"any_exposure_at", r.any_at_defined ? json(r.any_at) : json(nullptr)},
        {"any_exposure_at_se", r.any_at_defined ? json(r.any_at_se) : json(nullptr)}});
  return json{{"rows", rows}};
}

// Column order follows the published table: sample mean, immediate complier,
// any-exposure complier, AT share among treated, immediate AT, marginal AT,
// any-exposure AT share, any-exposure AT mean. SE columns are appended after.
inline std::string to_csv(const GroupMeansTable& t) {
  std::ostringstream o;
  o << "covariate,wave,sample_mean,immediate_complier,any_exposure_complier,"
       "at_share_treated,immediate_at,marginal_at,any_at_share_treated,"
       "any_exposure_at,sample_mean_se,immediate_complier_se,"
       "any_exposure_complier_se,immediate_at_se,marginal_at_se,any_exposure_at_se\n";
  auto cell = [](double v, bool defined) {
    return defined ? detail::fmt_double(v) : std::string();
  };
  for (const auto& r : t.rows)
    o << r.covariate << ',' << r.wave << ',' << detail::fmt_double(r.sample_mean) << ','
      << detail::fmt_double(r.immediate_complier) << ','
      << detail::fmt_double(r.any_complier) << ','
      << detail::fmt_double(r.at_share_treated) << ','
      << cell(r.immediate_at, r.immediate_at_defined) << ','
      << cell(r.marginal_at, r.marginal_at_defined) << ','
      << detail::fmt_double(r.any_at_share_treated) << ','
      << cell(r.any_at, r.any_at_defined) << ','
      << detail::fmt_double(r.sample_mean_se) << ','
      << detail::fmt_double(r.immediate_complier_se) << ','
      << detail::fmt_double(r.any_complier_se) << ','
      << cell(r.immediate_at_se, r.immediate_at_defined) << ','
      << cell(r.marginal_at_se, r.marginal_at_defined) << ','
      << cell(r.any_at_se, r.any_at_defined) << '\n';
  return o.str();
}

inline json to_json(const ImcoDiagnostic& d) {
  json hist = json::array();
  for (const auto& c : d.histogram)
    hist.push_back(json{{"wave", c.wave}, {"z", c.z}, {"t", c.t},
                        {"count", c.count}, {"share", c.share}});
  json flags = json::array();
  for (const auto& f : d.flags)
    flags.push_back(json{{"wave", f.wave},
                         {"intermediate_share_z1", f.intermediate_share_z1},
                         {"intermediate_share_z0", f.intermediate_share_z0},
                         {"diff", f.diff},
                         {"se", f.se},
                         {"flagged", f.flagged}});
  return json{{"histogram", hist}, {"flags", flags}};
}

// Figure-3-style histogram data.
inline std::string histogram_csv(const ImcoDiagnostic& d) {
  std::ostringstream o;
  o << "wave,z,t_exposure,count,share\n";
  for (const auto& c : d.histogram)
    o << c.wave << ',' << c.z << ',' << c.t << ',' << c.count << ','
      << detail::fmt_double(c.share) << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Figure data (per-wave series and cumulative-effect series)
// ---------------------------------------------------------------------------

inline std::string figure_any_exposure_csv(const AnyExposureSeries& s) {
  std::ostringstream o;
  o << "wave,series,estimate,ci_lo,ci_hi\n";
  auto line = [&](int wave, const char* series, double est, double se) {
    o << wave << ',' << series << ',' << detail::fmt_double(est) << ','
      << detail::fmt_double(est - kZ975 * se) << ','
      << detail::fmt_double(est + kZ975 * se) << '\n';
  };
  for (const auto& r : s.rows) {
    line(r.wave, "itt", r.itt, r.itt_se);
    line(r.wave, "iv_2sls", r.iv, r.iv_se);
    line(r.wave, "ols_as_treated", r.ols, r.ols_se);
  }
  return o.str();
}

inline std::string figure_cumulative_csv(const ExposureEffects& fx) {
  std::ostringstream o;
  o << "exposure_years,estimate,ci_lo,ci_hi\n";
  const auto coef = fx.level_coef();
  const auto se = fx.level_se();
  for (std::size_t i = 0; i < fx.levels.size(); ++i)
    o << fx.levels[i] << ',' << detail::fmt_double(coef[i]) << ','
      << detail::fmt_double(coef[i] - kZ975 * se[i]) << ','
      << detail::fmt_double(coef[i] + kZ975 * se[i]) << '\n';
  return o.str();
}

inline json to_json(const AcrWeights& a) {
  return json{{"pi", detail::mat_to_json(a.pi)},
              {"rho", detail::vec_to_json(a.rho)},
              {"lambda_check", detail::vec_to_json(a.lambda_check)}};
}

// ---------------------------------------------------------------------------
// DGP configuration
// ---------------------------------------------------------------------------

inline json to_json(const DgpConfig& c) {
  json types = json::array();
  auto wave_or_never = [](int r) {
    return r == kNever ? json("never") : json(r);
  };
  for (const auto& t : c.types)
    types.push_back(json{{"share", t.share},
                         {"r1", wave_or_never(t.r1)},
                         {"r0", wave_or_never(t.r0)},
                         {"mu", t.mu}});
  json j{{"w_bar", c.w_bar},
         {"p_assign", c.p_assign},
         {"types", types},
         {"lambda", detail::vec_to_json(c.lambda)},
         {"wave_drift", c.wave_drift},
         {"direct_z_effect", c.direct_z_effect},
         {"noise_sd", c.noise_sd},
         {"covariate_noise_sd", c.covariate_noise_sd},
         {"noise_ar1", c.noise_ar1},
         {"attrition_z0", c.attrition_z0},
         {"attrition_z1", c.attrition_z1},
         {"n_regions", c.n_regions},
         {"allow_defiers", c.allow_defiers},
         {"seed", c.seed}};
  return j;
}

inline DgpConfig dgp_from_json(const json& j) {
  DgpConfig c;
  auto parse_wave = [](const json& v) -> int {
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      require(s == "never" || s == "NEVER", "bad first-treatment wave '" + s + "'");
      return kNever;
    }
    return v.get<int>();
  };
  c.w_bar = j.at("w_bar").get<int>();
  c.p_assign = j.value("p_assign", 0.5);
  for (const auto& t : j.at("types")) {
    LatentType ty;
    ty.share = t.at("share").get<double>();
    ty.r1 = parse_wave(t.at("r1"));
    ty.r0 = parse_wave(t.at("r0"));
    ty.mu = t.at("mu").get<double>();
    c.types.push_back(ty);
  }
  const auto& lam = j.at("lambda");
  c.lambda.resize(lam.size());
  for (std::size_t i = 0; i < lam.size(); ++i) c.lambda[i] = lam[i].get<double>();
  c.wave_drift = j.value("wave_drift", 0.0);
  c.direct_z_effect = j.value("direct_z_effect", 0.0);
  c.noise_sd = j.value("noise_sd", 10.0);
  c.covariate_noise_sd = j.value("covariate_noise_sd", 5.0);
  c.noise_ar1 = j.value("noise_ar1", 0.0);
  c.attrition_z0 = j.value("attrition_z0", std::vector<double>{});
  c.attrition_z1 = j.value("attrition_z1", std::vector<double>{});
  if (j.contains("attrition")) {
    c.attrition_z0 = j.at("attrition").get<std::vector<double>>();
    c.attrition_z1 = c.attrition_z0;
  }
  c.n_regions = j.value("n_regions", 0);
  c.allow_defiers = j.value("allow_defiers", false);
  c.seed = j.value("seed", kDefaultSeed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Oracle report
// ---------------------------------------------------------------------------

inline json to_json(const OracleReport& r) {
  json waves = json::array();
  for (const auto& w : r.waves)
    waves.push_back(json{
        {"wave", w.wave},
        {"control_rate", w.control_rate},
        {"treated_rate", w.treated_rate},
        {"first_stage", w.first_stage},
        {"itt", w.itt},
        {"y_mean_z1", w.y_mean_z1},
        {"y_mean_z0", w.y_mean_z0},
        {"tau", w.tau_defined ? json(w.tau) : json(nullptr)},
        {"tau_valid", w.tau_valid},
        {"as_treated_any", detail::num_or_null(w.as_treated_any)},
        {"later_at_x", w.later_at_defined ? json(w.later_at_x) : json(nullptr)},
        {"marginal_at_x", w.marginal_at_defined ? json(w.marginal_at_x) : json(nullptr)},
        {"pi_w", w.marginal_at_defined ? json(w.pi_w) : json(nullptr)},
        {"any_complier_x", detail::num_or_null(w.any_complier_x)},
        {"any_at_x", w.any_at_defined ? json(w.any_at_x) : json(nullptr)},
        {"at_share_treated", detail::num_or_null(w.at_share_treated)},
        {"any_at_share_treated", detail::num_or_null(w.any_at_share_treated)},
        {"complier_y", w.complier_y},
        {"immediate_at_y", w.immediate_at_y_defined ? json(w.immediate_at_y) : json(nullptr)},
        {"later_at_y", w.later_at_y_defined ? json(w.later_at_y) : json(nullptr)},
        {"marginal_at_y", w.marginal_at_y_defined ? json(w.marginal_at_y) : json(nullptr)}});
  return json{{"w_bar", r.w_bar},
              {"p_assign", r.p_assign},
              {"assumptions_hold", r.assumptions_hold},
              {"imco_satisfied", r.imco_satisfied},
              {"lambda_input", detail::vec_to_json(r.lambda_input)},
              {"lambda", detail::vec_to_json(r.lambda)},
              {"Lambda", detail::vec_to_json(r.Lambda)},
              {"rho", detail::vec_to_json(r.rho)},
              {"pi", detail::mat_to_json(r.pi)},
              {"immediate_complier_x", r.immediate_complier_x},
              {"immediate_at_x",
               r.immediate_at_defined ? json(r.immediate_at_x) : json(nullptr)},
              {"waves", waves},
              {"disagg_complier_x", detail::mat_to_json(r.disagg_complier_x)},
              {"disagg_complier_y", detail::mat_to_json(r.disagg_complier_y)},
              {"disagg_atnt_x", detail::mat_to_json(r.disagg_atnt_x)},
              {"disagg_atnt_y", detail::mat_to_json(r.disagg_atnt_y)},
              {"ols_levels", detail::vec_to_json(r.ols_levels)},
              {"ols_level_list", r.ols_level_list}};
}

// ---------------------------------------------------------------------------
// Monte Carlo summary
// ---------------------------------------------------------------------------

inline json to_json(const McSummary& s) {
  json coefs = json::array();
  for (const auto& c : s.coefs)
    coefs.push_back(json{{"name", c.name},
                         {"truth", detail::num_or_null(c.truth)},
                         {"mean_estimate", c.mean_estimate},
                         {"bias", detail::num_or_null(c.bias)},
                         {"emp_sd", c.emp_sd},
                         {"mean_se", c.mean_se},
                         {"coverage95", detail::num_or_null(c.coverage95)}});
  json tests = json::array();
  for (const auto& t : s.tests)
    tests.push_back(json{{"name", t.name},
                         {"rejection_rate_5pct", t.rejection_rate_5pct}});
  return json{{"n", s.n},
              {"reps", s.reps},
              {"failures", s.failures},
              {"failure_notes", s.failure_notes},
              {"coefs", coefs},
              {"tests", tests}};
}

}  // namespace dyniv
