#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dyniv/panel.hpp"
#include "dyniv/regression.hpp"

namespace dyniv {

// ---------------------------------------------------------------------------
// Per-wave summary (Table-1-style)
// ---------------------------------------------------------------------------

struct WaveSummaryRow {
  int wave = 0;
  double control_rate = 0;   // any-exposure rate, assigned-conservative arm
  double treated_rate = 0;   // any-exposure rate, assigned-invasive arm
  double first_stage = 0;    // treated_rate - control_rate
  long n_obs_z0 = 0, n_obs_z1 = 0;  // observed outcomes per arm
  double y_mean_z0 = 0, y_sd_z0 = 0;
  double y_mean_z1 = 0, y_sd_z1 = 0;
  double itt = 0, itt_se = 0;  // raw difference in means
};

struct WaveSummary {
  std::vector<WaveSummaryRow> rows;
};

namespace detail {

struct MeanVar {
  double mean = 0, var = 0;  // var uses n-1 normalization
  long n = 0;
};

inline MeanVar mean_var(const std::vector<double>& v) {
  MeanVar m;
  m.n = static_cast<long>(v.size());
  if (m.n == 0) return m;
  for (double x : v) m.mean += x;
  m.mean /= m.n;
  if (m.n > 1) {
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= (m.n - 1);
  }
  return m;
}

}  // namespace detail

// Exposure rates are computed over all participants (first-treatment wave is
// always known); outcome statistics and the raw-mean ITT use the rows with an
// observed outcome at that wave.
inline WaveSummary wave_summary(const PanelDataset& d) {
  WaveSummary s;
  for (int w = 1; w <= d.w_bar; ++w) {
    WaveSummaryRow r;
    r.wave = w;
    long n_arm[2] = {0, 0}, n_exposed[2] = {0, 0};
    std::vector<double> y0, y1;
    for (const auto& p : d.participants) {
      ++n_arm[p.z];
      if (p.any_exposure(w)) ++n_exposed[p.z];
      if (p.outcomes[w - 1]) (p.z ? y1 : y0).push_back(*p.outcomes[w - 1]);
    }
    require(n_arm[0] > 0 && n_arm[1] > 0, "empty arm");
    require(!y0.empty() && !y1.empty(),
            "empty arm at wave " + std::to_string(w) + ": no observed outcomes");
    r.control_rate = static_cast<double>(n_exposed[0]) / n_arm[0];
    r.treated_rate = static_cast<double>(n_exposed[1]) / n_arm[1];
    r.first_stage = r.treated_rate - r.control_rate;
    auto m0 = detail::mean_var(y0);
    auto m1 = detail::mean_var(y1);
    r.n_obs_z0 = m0.n;
    r.n_obs_z1 = m1.n;
    r.y_mean_z0 = m0.mean;
    r.y_sd_z0 = std::sqrt(m0.var);
    r.y_mean_z1 = m1.mean;
    r.y_sd_z1 = std::sqrt(m1.var);
    r.itt = m1.mean - m0.mean;
    r.itt_se = std::sqrt(m1.var / m1.n + m0.var / m0.n);
    s.rows.push_back(r);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Design construction
// ---------------------------------------------------------------------------

enum class EndoParam {
  incremental,   // D_wt = 1[T_w >= t], one column per exposure level
  levels,        // R_wt = 1[T_w == t]
  any_exposure,  // V_w = 1[T_w > 0], single column
};

namespace detail {

struct StackedRows {
  std::vector<long long> id;
  std::vector<int> wave;
  std::vector<int> t_exp;
  std::vector<int> z;
  Eigen::VectorXd y;
  Eigen::MatrixXd controls;  // n x c
};

inline StackedRows collect_rows(const PanelDataset& d,
                                const std::vector<std::string>& controls,
                                int only_wave = 0) {
  std::vector<int> cidx;
  for (const auto& c : controls) cidx.push_back(d.covariate_index(c));
  StackedRows r;
  std::vector<double> ys;
  std::vector<std::vector<double>> cv(cidx.size());
  for (const auto& p : d.participants)
    for (int w = 1; w <= d.w_bar; ++w) {
      if (only_wave && w != only_wave) continue;
      if (!p.outcomes[w - 1]) continue;
      r.id.push_back(d.cluster_key(p));
      r.wave.push_back(w);
      r.t_exp.push_back(p.exposure(w));
      r.z.push_back(p.z);
      ys.push_back(*p.outcomes[w - 1]);
      for (std::size_t j = 0; j < cidx.size(); ++j)
        cv[j].push_back(p.covariates[cidx[j]]);
    }
  const long n = static_cast<long>(ys.size());
  require(n > 0, "no observed outcomes in the requested waves");
  r.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  r.controls.resize(n, static_cast<long>(cidx.size()));
  for (std::size_t j = 0; j < cidx.size(); ++j)
    r.controls.col(j) = Eigen::Map<Eigen::VectorXd>(cv[j].data(), n);
  return r;
}

}  // namespace detail

struct StackedDesign {
  DesignMatrices dm;
  std::vector<int> levels;             // exposure levels kept (empty for any_exposure)
  std::vector<std::string> level_names;
  std::vector<std::string> notes;      // dropped levels / waves
};

// Builds the stacked design of the dynamic-effect estimators: regressors are
// an intercept, wave dummies for waves 2.., controls, and the endogenous
// exposure block; instruments replace the exposure block with Z and
// Z x 1[w=t] interactions. Controls enter both sides (standard convention for
// included exogenous regressors). Exposure levels with zero sample support
// are dropped with a note rather than failing rank checks.
inline StackedDesign build_stacked_design(const PanelDataset& d,
                                          const std::vector<std::string>& controls,
                                          EndoParam param) {
  auto rows = detail::collect_rows(d, controls);
  const long n = rows.y.size();

  std::vector<int> waves_present;
  for (int w = 1; w <= d.w_bar; ++w)
    if (std::find(rows.wave.begin(), rows.wave.end(), w) != rows.wave.end())
      waves_present.push_back(w);

  StackedDesign out;
  for (int w = 1; w <= d.w_bar; ++w)
    if (std::find(waves_present.begin(), waves_present.end(), w) == waves_present.end())
      out.notes.push_back("wave " + std::to_string(w) + " has no observed outcomes");

  // Exposure levels with sample support.
  if (param != EndoParam::any_exposure) {
    for (int t = 1; t <= d.w_bar; ++t) {
      bool seen = false;
      for (long i = 0; i < n && !seen; ++i)
        seen = param == EndoParam::incremental ? rows.t_exp[i] >= t
                                               : rows.t_exp[i] == t;
      if (seen) out.levels.push_back(t);
      else out.notes.push_back("exposure level " + std::to_string(t) +
                               " dropped: no sample support");
    }
    require(!out.levels.empty(), "no exposure level has sample support");
  }

  auto& dm = out.dm;
  dm.y = rows.y;
  dm.cluster = rows.id;

  std::vector<int> dummy_waves(waves_present.begin(), waves_present.end());
  if (!dummy_waves.empty()) dummy_waves.erase(dummy_waves.begin());  // reference wave

  const long c = rows.controls.cols();
  const long n_endo = param == EndoParam::any_exposure
                          ? 1
                          : static_cast<long>(out.levels.size());
  const long kx = 1 + static_cast<long>(dummy_waves.size()) + c + n_endo;
  const long kz = 1 + static_cast<long>(dummy_waves.size()) + c + 1 +
                  static_cast<long>(dummy_waves.size());

  dm.X.setZero(n, kx);
  dm.Zmat.setZero(n, kz);

  long xcol = 0, zcol = 0;
  dm.X.col(xcol).setOnes();
  dm.x_names.push_back("const");
  ++xcol;
  dm.Zmat.col(zcol).setOnes();
  dm.z_names.push_back("const");
  ++zcol;
  for (int w : dummy_waves) {
    for (long i = 0; i < n; ++i)
      if (rows.wave[i] == w) dm.X(i, xcol) = 1;
    dm.Zmat.col(zcol) = dm.X.col(xcol);
    dm.x_names.push_back("wave" + std::to_string(w));
    dm.z_names.push_back("wave" + std::to_string(w));
    ++xcol;
    ++zcol;
  }
  for (long j = 0; j < c; ++j) {
    dm.X.col(xcol) = rows.controls.col(j);
    dm.Zmat.col(zcol) = rows.controls.col(j);
    dm.x_names.push_back(controls[j]);
    dm.z_names.push_back(controls[j]);
    ++xcol;
    ++zcol;
  }
  // Endogenous exposure block.
  if (param == EndoParam::any_exposure) {
    dm.endogenous_cols.push_back(static_cast<int>(xcol));
    for (long i = 0; i < n; ++i)
      if (rows.t_exp[i] > 0) dm.X(i, xcol) = 1;
    dm.x_names.push_back("any_exposure");
    out.level_names.push_back("any_exposure");
    ++xcol;
  } else {
    for (int t : out.levels) {
      dm.endogenous_cols.push_back(static_cast<int>(xcol));
      for (long i = 0; i < n; ++i) {
        const bool on = param == EndoParam::incremental ? rows.t_exp[i] >= t
                                                        : rows.t_exp[i] == t;
        if (on) dm.X(i, xcol) = 1;
      }
      const std::string nm =
          (param == EndoParam::incremental ? "exp_ge" : "exp_eq") + std::to_string(t);
      dm.x_names.push_back(nm);
      out.level_names.push_back(nm);
      ++xcol;
    }
  }
  // Excluded instruments: Z and Z x wave dummies.
  for (long i = 0; i < n; ++i)
    if (rows.z[i]) dm.Zmat(i, zcol) = 1;
  dm.z_names.push_back("z");
  ++zcol;
  for (int w : dummy_waves) {
    for (long i = 0; i < n; ++i)
      if (rows.z[i] && rows.wave[i] == w) dm.Zmat(i, zcol) = 1;
    dm.z_names.push_back("z_wave" + std::to_string(w));
    ++zcol;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic exposure effects
// ---------------------------------------------------------------------------

enum class ExposureKind { incremental, cumulative };

// Fit of a stacked exposure design: the endogenous-level coefficients (lambda
// or Lambda by exposure level), their covariance block, and equality tests.
struct ExposureEffects {
  ExposureKind kind = ExposureKind::incremental;
  std::vector<int> levels;
  std::vector<std::string> level_names;
  EstimateTable est;  // full fit including intercept/wave dummies/controls
  std::optional<TestResult> equality_all;   // level coefs all equal
  std::optional<TestResult> equality_tail;  // levels 2.. equal
  std::vector<std::string> notes;

  Eigen::VectorXd level_coef() const {
    Eigen::VectorXd v(level_names.size());
    for (std::size_t i = 0; i < level_names.size(); ++i)
      v[i] = est.coef[est.index_of(level_names[i])];
    return v;
  }
  Eigen::VectorXd level_se() const {
    Eigen::VectorXd v(level_names.size());
    for (std::size_t i = 0; i < level_names.size(); ++i)
      v[i] = est.se(est.index_of(level_names[i]));
    return v;
  }
};

namespace detail {

inline ExposureEffects fit_exposure_effects(const PanelDataset& d,
                                            const std::vector<std::string>& controls,
                                            EndoParam param, ExposureKind kind) {
  auto design = build_stacked_design(d, controls, param);
  ExposureEffects fx;
  fx.kind = kind;
  fx.levels = design.levels;
  fx.level_names = design.level_names;
  fx.notes = design.notes;
  fx.est = iv_2sls(design.dm);
  fx.est.meta.kind = kind == ExposureKind::incremental ? "incremental_lambda"
                                                       : "cumulative_Lambda";
  fx.est.meta.instruments = "z, z x wave dummies";
  fx.est.meta.wave_lo = 1;
  fx.est.meta.wave_hi = d.w_bar;
  fx.est.meta.notes = design.notes;
  if (fx.level_names.size() >= 2)
    fx.equality_all = equality_test(fx.est, fx.level_names);
  if (fx.level_names.size() >= 3)
    fx.equality_tail = equality_test(
        fx.est, {fx.level_names.begin() + 1, fx.level_names.end()});
  return fx;
}

}  // namespace detail

// Stacked 2SLS for incremental effects: instruments the exposure-duration
// indicators D_wt with Z and Z x wave interactions. Coefficients are the
// per-year incremental complier effects lambda_t.
inline ExposureEffects incremental_effects(const PanelDataset& d,
                                           const std::vector<std::string>& controls = {}) {
  return detail::fit_exposure_effects(d, controls, EndoParam::incremental,
                                      ExposureKind::incremental);
}

// Same design with exposure-level indicators R_wt; coefficients are the
// cumulative effects Lambda_t, exactly the running sums of the incremental
// fit on the same data.
inline ExposureEffects cumulative_effects(const PanelDataset& d,
                                          const std::vector<std::string>& controls = {}) {
  return detail::fit_exposure_effects(d, controls, EndoParam::levels,
                                      ExposureKind::cumulative);
}

// ---------------------------------------------------------------------------
// Wave-1 Wald ratio
// ---------------------------------------------------------------------------

// ITT_1 / first-stage_1 with a delta-method SE, computed over participants
// with an observed wave-1 outcome (the same rows the one-wave 2SLS uses, so
// the point estimates agree to rounding).
inline EstimateTable wald_late_wave1(const PanelDataset& d) {
  std::vector<double> y[2], t[2];
  for (const auto& p : d.participants)
    if (p.outcomes[0]) {
      y[p.z].push_back(*p.outcomes[0]);
      t[p.z].push_back(p.exposure(1) > 0 ? 1.0 : 0.0);
    }
  require(!y[0].empty() && !y[1].empty(), "empty arm");

  auto my0 = detail::mean_var(y[0]), my1 = detail::mean_var(y[1]);
  auto mt0 = detail::mean_var(t[0]), mt1 = detail::mean_var(t[1]);
  const double itt = my1.mean - my0.mean;
  const double fs = mt1.mean - mt0.mean;
  require(std::abs(fs) >= 1e-6,
          "zero first stage at wave 1 (F1 = " + std::to_string(fs) + ")");
  const double late = itt / fs;

  auto cov_in = [](const std::vector<double>& a, const std::vector<double>& b) {
    auto ma = detail::mean_var(a), mb = detail::mean_var(b);
    double c = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      c += (a[i] - ma.mean) * (b[i] - mb.mean);
    return a.size() > 1 ? c / (a.size() - 1) : 0.0;
  };
  const double var_itt = my1.var / my1.n + my0.var / my0.n;
  const double var_fs = mt1.var / mt1.n + mt0.var / mt0.n;
  const double cov_if = cov_in(y[1], t[1]) / my1.n + cov_in(y[0], t[0]) / my0.n;
  const double var_late =
      (var_itt - 2 * late * cov_if + late * late * var_fs) / (fs * fs);

  EstimateTable est;
  est.names = {"late_wave1"};
  est.coef = Eigen::VectorXd::Constant(1, late);
  est.vcov = Eigen::MatrixXd::Constant(1, 1, std::max(0.0, var_late));
  est.n_obs = my0.n + my1.n;
  est.n_clusters = est.n_obs;
  est.meta.kind = "wald_late_wave1";
  est.meta.instruments = "z";
  est.meta.wave_lo = est.meta.wave_hi = 1;
  est.meta.notes = {"itt=" + std::to_string(itt), "first_stage=" + std::to_string(fs)};
  return est;
}

// ---------------------------------------------------------------------------
// Any-exposure IV and as-treated OLS
// ---------------------------------------------------------------------------

namespace detail {

inline DesignMatrices wave_design(const PanelDataset& d, int w,
                                  const std::vector<std::string>& controls,
                                  bool instrument_any_exposure) {
  require(w >= 1 && w <= d.w_bar, "wave out of range");
  auto rows = collect_rows(d, controls, w);
  const long n = rows.y.size();
  const long c = rows.controls.cols();
  DesignMatrices dm;
  dm.y = rows.y;
  dm.cluster = rows.id;
  dm.X.setZero(n, 2 + c);
  dm.X.col(0).setOnes();
  dm.x_names.push_back("const");
  for (long j = 0; j < c; ++j) {
    dm.X.col(1 + j) = rows.controls.col(j);
    dm.x_names.push_back(controls[j]);
  }
  for (long i = 0; i < n; ++i)
    if (rows.t_exp[i] > 0) dm.X(i, 1 + c) = 1;
  dm.x_names.push_back("any_exposure");
  if (instrument_any_exposure) {
    dm.endogenous_cols.push_back(static_cast<int>(1 + c));
    dm.Zmat.setZero(n, 2 + c);
    dm.Zmat.leftCols(1 + c) = dm.X.leftCols(1 + c);
    for (long i = 0; i < n; ++i)
      if (rows.z[i]) dm.Zmat(i, 1 + c) = 1;
    dm.z_names = dm.x_names;
    dm.z_names.back() = "z";
  } else {
    dm.Zmat = dm.X;
    dm.z_names = dm.x_names;
  }
  return dm;
}

inline double any_exposure_first_stage(const DesignMatrices& dm) {
  // mean(V | z=1) - mean(V | z=0) over the design rows
  const long n = dm.rows();
  const long vcol = dm.X.cols() - 1;
  const long zcol = dm.Zmat.cols() - 1;
  double s[2] = {0, 0};
  long cnt[2] = {0, 0};
  for (long i = 0; i < n; ++i) {
    const int z = dm.Zmat(i, zcol) > 0.5 ? 1 : 0;
    s[z] += dm.X(i, vcol);
    ++cnt[z];
  }
  require(cnt[0] > 0 && cnt[1] > 0, "empty arm");
  return s[1] / cnt[1] - s[0] / cnt[0];
}

}  // namespace detail

// Wave-w 2SLS of Y_w on the any-exposure dummy instrumented by Z. At w = 1
// this coincides with the wave-1 Wald ratio.
inline EstimateTable any_exposure_iv(const PanelDataset& d, int w,
                                     const std::vector<std::string>& controls = {}) {
  auto dm = detail::wave_design(d, w, controls, true);
  const double fs = detail::any_exposure_first_stage(dm);
  require(std::abs(fs) >= 1e-6, "zero any-exposure first stage at wave " +
                                    std::to_string(w));
  auto est = iv_2sls(dm);
  est.meta.kind = "any_exposure_iv";
  est.meta.instruments = "z";
  est.meta.wave_lo = est.meta.wave_hi = w;
  return est;
}

struct StackedAnyExposure {
  EstimateTable est;     // constant tau fit
  TestResult over_id;    // Hansen J: constant-effects test, dof w_bar - 1
};

// Stacked any-exposure model: single endogenous V_w instrumented by Z and
// Z x wave dummies. The over-identification J statistic doubles as the test
// of constant effects across waves.
inline StackedAnyExposure any_exposure_stacked(const PanelDataset& d,
                                               const std::vector<std::string>& controls = {}) {
  require(d.w_bar >= 2, "not over-identified: need at least 2 waves");
  auto design = build_stacked_design(d, controls, EndoParam::any_exposure);
  StackedAnyExposure out;
  out.est = iv_2sls(design.dm);
  out.est.meta.kind = "any_exposure_stacked";
  out.est.meta.instruments = "z, z x wave dummies";
  out.est.meta.wave_lo = 1;
  out.est.meta.wave_hi = d.w_bar;
  out.est.meta.notes = design.notes;
  out.over_id = hansen_j(design.dm, out.est);
  return out;
}

// As-treated OLS of Y_w on the any-exposure dummy, one wave at a time. This
// is the conventional per-protocol comparison that discards randomization.
inline EstimateTable as_treated_any_exposure(const PanelDataset& d, int w,
                                             const std::vector<std::string>& controls = {}) {
  auto dm = detail::wave_design(d, w, controls, false);
  auto est = ols(dm);
  est.meta.kind = "as_treated_any_exposure";
  est.meta.wave_lo = est.meta.wave_hi = w;
  return est;
}

// Stacked as-treated OLS on exposure-level indicators with wave dummies,
// clustered on participant. Coefficient names match the cumulative 2SLS fit
// so the two can be compared level by level.
inline ExposureEffects as_treated_levels(const PanelDataset& d,
                                         const std::vector<std::string>& controls = {}) {
  auto design = build_stacked_design(d, controls, EndoParam::levels);
  design.dm.Zmat = design.dm.X;  // plain OLS
  design.dm.z_names = design.dm.x_names;
  design.dm.endogenous_cols.clear();
  ExposureEffects fx;
  fx.kind = ExposureKind::cumulative;
  fx.levels = design.levels;
  fx.level_names = design.level_names;
  fx.notes = design.notes;
  fx.est = ols(design.dm);
  fx.est.meta.kind = "as_treated_levels";
  fx.est.meta.wave_lo = 1;
  fx.est.meta.wave_hi = d.w_bar;
  if (fx.level_names.size() >= 2) fx.equality_all = equality_test(fx.est, fx.level_names);
  return fx;
}

// ---------------------------------------------------------------------------
// 2SLS vs OLS comparison table (Table-2-style)
// ---------------------------------------------------------------------------

struct HausmanRow {
  int level = 0;
  double iv = 0, iv_se = 0;
  double ols = 0, ols_se = 0;
  double diff = 0, diff_se = 0, t_stat = 0;
};

struct HausmanComparison {
  std::vector<HausmanRow> rows;
  TestResult joint;  // chi-squared, dof = number of compared levels
  ExposureEffects iv_fit;
  ExposureEffects ols_fit;
};

// Fits cumulative 2SLS and the as-treated levels OLS on the same rows, then
// tests their difference with the stacked-influence covariance.
inline HausmanComparison hausman_table(const PanelDataset& d,
                                       const std::vector<std::string>& controls = {}) {
  HausmanComparison h;
  h.iv_fit = cumulative_effects(d, controls);
  h.ols_fit = as_treated_levels(d, controls);
  require(h.iv_fit.level_names == h.ols_fit.level_names,
          "misaligned coefficient names between 2SLS and OLS fits");
  auto diff = joint_difference_test(h.iv_fit.est, h.ols_fit.est, h.iv_fit.level_names);
  for (std::size_t i = 0; i < h.iv_fit.level_names.size(); ++i) {
    HausmanRow r;
    r.level = h.iv_fit.levels[i];
    r.iv = h.iv_fit.est.coef[h.iv_fit.est.index_of(h.iv_fit.level_names[i])];
    r.iv_se = h.iv_fit.est.se(h.iv_fit.est.index_of(h.iv_fit.level_names[i]));
    r.ols = h.ols_fit.est.coef[h.ols_fit.est.index_of(h.iv_fit.level_names[i])];
    r.ols_se = h.ols_fit.est.se(h.ols_fit.est.index_of(h.iv_fit.level_names[i]));
    r.diff = diff.diff[i];
    r.diff_se = diff.se[i];
    r.t_stat = diff.t_stat[i];
    h.rows.push_back(r);
  }
  h.joint = diff.joint;
  return h;
}

// ---------------------------------------------------------------------------
// ACR weight diagnostics
// ---------------------------------------------------------------------------

struct AcrWeights {
  Eigen::MatrixXd pi;            // w_bar x w_bar, lower-triangular
  Eigen::VectorXd rho;           // per-wave reduced forms
  Eigen::VectorXd lambda_check;  // Pi^{-1} rho, cross-check estimator
};

// Sample analogs of the reduced-form / first-stage system rho = Pi lambda.
// Moments are taken over rows with an observed outcome at each wave, which is
// exactly the sample the stacked 2SLS uses; on such rows the no-controls
// stacked 2SLS coefficient solves the same moment equations, so lambda_check
// reproduces it.
inline AcrWeights acr_weights(const PanelDataset& d) {
  AcrWeights a;
  a.pi.setZero(d.w_bar, d.w_bar);
  a.rho.setZero(d.w_bar);
  for (int w = 1; w <= d.w_bar; ++w) {
    double sy[2] = {0, 0};
    Eigen::VectorXd sd[2] = {Eigen::VectorXd::Zero(d.w_bar),
                             Eigen::VectorXd::Zero(d.w_bar)};
    long cnt[2] = {0, 0};
    for (const auto& p : d.participants) {
      if (!p.outcomes[w - 1]) continue;
      const int z = p.z;
      ++cnt[z];
      sy[z] += *p.outcomes[w - 1];
      const int t_exp = p.exposure(w);
      for (int t = 1; t <= t_exp; ++t) sd[z][t - 1] += 1;
    }
    require(cnt[0] > 0 && cnt[1] > 0, "empty arm at wave " + std::to_string(w));
    a.rho[w - 1] = sy[1] / cnt[1] - sy[0] / cnt[0];
    for (int t = 1; t <= d.w_bar; ++t)
      a.pi(w - 1, t - 1) = sd[1][t - 1] / cnt[1] - sd[0][t - 1] / cnt[0];
  }
  for (int w = 0; w < d.w_bar; ++w)
    if (std::abs(a.pi(w, w)) < 1e-6)
      fail("Pi numerically singular: |diagonal| below 1e-6 at wave " +
           std::to_string(w + 1));
  a.lambda_check =
      a.pi.triangularView<Eigen::Lower>().solve(a.rho);
  return a;
}

// ---------------------------------------------------------------------------
// Per-wave ITT / 2SLS / OLS series (Figure-1-style data)
// ---------------------------------------------------------------------------

struct AnyExposureSeriesRow {
  int wave = 0;
  double itt = 0, itt_se = 0;
  double iv = 0, iv_se = 0;
  double ols = 0, ols_se = 0;
};

struct AnyExposureSeries {
  std::vector<AnyExposureSeriesRow> rows;
  std::optional<StackedAnyExposure> stacked;  // absent for single-wave panels
  // Set when the stacked over-identification test rejects constant effects at
  // the 5% level; per-wave tau estimates then carry an interpretation caveat.
  bool constant_effects_rejected = false;
};

inline AnyExposureSeries any_exposure_series(const PanelDataset& d,
                                             const std::vector<std::string>& controls = {}) {
  AnyExposureSeries s;
  for (int w = 1; w <= d.w_bar; ++w) {
    AnyExposureSeriesRow r;
    r.wave = w;
    // ITT = coefficient on z in per-wave OLS with the same controls.
    auto itt_dm = detail::wave_design(d, w, controls, true);
    std::swap(itt_dm.X, itt_dm.Zmat);
    std::swap(itt_dm.x_names, itt_dm.z_names);
    itt_dm.endogenous_cols.clear();
    auto itt_fit = ols(itt_dm);
    r.itt = itt_fit["z"];
    r.itt_se = itt_fit.se(itt_fit.index_of("z"));
    auto iv_fit = any_exposure_iv(d, w, controls);
    r.iv = iv_fit["any_exposure"];
    r.iv_se = iv_fit.se(iv_fit.index_of("any_exposure"));
    auto ols_fit = as_treated_any_exposure(d, w, controls);
    r.ols = ols_fit["any_exposure"];
    r.ols_se = ols_fit.se(ols_fit.index_of("any_exposure"));
    s.rows.push_back(r);
  }
  if (d.w_bar >= 2) {
    s.stacked = any_exposure_stacked(d, controls);
    s.constant_effects_rejected = s.stacked->over_id.p_value < 0.05;
  }
  return s;
}

}  // namespace dyniv
