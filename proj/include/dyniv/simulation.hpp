#pragma once

#include <atomic>
#include <cmath>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dyniv/characterization.hpp"
#include "dyniv/estimators.hpp"
#include "dyniv/panel.hpp"

namespace dyniv {

inline constexpr std::uint64_t kDefaultSeed = 20250101;

// ---------------------------------------------------------------------------
// Data-generating process
// ---------------------------------------------------------------------------

// One latent compliance type: first-treatment wave under each assignment and
// a type-level baseline mean. Monotonicity is r1 <= r0 (assignment never
// delays exposure); kNever acts as +infinity.
struct LatentType {
  double share = 0;
  int r1 = kNever;
  int r0 = kNever;
  double mu = 0;
};

struct DgpConfig {
  int w_bar = 3;
  double p_assign = 0.5;
  std::vector<LatentType> types;
  Eigen::VectorXd lambda;       // incremental exposure effects, size w_bar
  double wave_drift = 0;        // wave-ignorability violation toggle
  double direct_z_effect = 0;   // exclusion-restriction violation toggle
  double noise_sd = 10;
  double covariate_noise_sd = 5;
  double noise_ar1 = 0;         // within-person AR(1) correlation of outcome noise
  std::vector<double> attrition_z0;  // per-wave missingness; empty = none
  std::vector<double> attrition_z1;
  int n_regions = 0;            // adds an independent categorical covariate
  bool allow_defiers = false;
  std::uint64_t seed = kDefaultSeed;

  double attrition(int w, int z) const {
    const auto& a = z ? attrition_z1 : attrition_z0;
    return a.empty() ? 0.0 : a[w - 1];
  }

  int first_treated(int z, const LatentType& t) const { return z ? t.r1 : t.r0; }

  double cumulative_effect(int t) const {
    double s = 0;
    for (int i = 0; i < t; ++i) s += lambda[i];
    return s;
  }

  // Mean potential outcome at wave w with t years of exposure under arm z.
  // The wave-drift term perturbs treated outcomes by wave, which breaks wave
  // ignorability; the direct z term breaks exclusion.
  double outcome_mean(const LatentType& ty, int w, int t, int z) const {
    return ty.mu + cumulative_effect(t) + (t >= 1 ? wave_drift * w : 0.0) +
           (z ? direct_z_effect : 0.0);
  }

  void validate() const {
    require(w_bar >= 1, "w_bar must be >= 1");
    require(p_assign > 0 && p_assign < 1, "p_assign must lie in (0,1)");
    require(!types.empty(), "no latent types");
    double s = 0;
    for (const auto& t : types) {
      require(t.share >= 0 && t.share <= 1, "type share outside [0,1]");
      s += t.share;
      for (int r : {t.r1, t.r0})
        require(r == kNever || (r >= 1 && r <= w_bar),
                "first-treatment wave outside {1,..,w_bar} u {never}");
      if (!allow_defiers)
        require(t.r1 <= t.r0, "defier type (r1 > r0) without allow_defiers");
    }
    require(std::abs(s - 1.0) <= 1e-9, "type shares must sum to 1");
    require(lambda.size() == w_bar, "lambda must have one entry per wave");
    require(lambda.allFinite(), "lambda must be finite");
    require(noise_sd >= 0 && covariate_noise_sd >= 0, "noise SDs must be >= 0");
    require(noise_ar1 >= 0 && noise_ar1 < 1, "noise_ar1 must lie in [0,1)");
    for (const auto* a : {&attrition_z0, &attrition_z1}) {
      require(a->empty() || static_cast<int>(a->size()) == w_bar,
              "attrition vector must be empty or have w_bar entries");
      for (double p : *a) require(p >= 0 && p <= 1, "attrition outside [0,1]");
    }
    require(n_regions == 0 || n_regions >= 2, "n_regions must be 0 or >= 2");
  }
};

// ---------------------------------------------------------------------------
// Named reference configurations
// ---------------------------------------------------------------------------

// Five-type reference trial: immediate compliers, never-takers, immediate and
// later always-takers, and delay compliers (treated at wave 3 when assigned
// control). Every estimand is hand-computable from the type table.
inline DgpConfig ref_a() {
  DgpConfig c;
  c.w_bar = 3;
  c.p_assign = 0.5;
  c.lambda = Eigen::Vector3d(4, 1, 0.5);
  c.noise_sd = 10;
  c.covariate_noise_sd = 5;
  c.types = {
      {0.5, 1, kNever, 50},  // immediate complier
      {0.2, kNever, kNever, 45},  // never-taker
      {0.1, 1, 1, 35},       // immediate always-taker
      {0.1, 2, 2, 38},       // later always-taker
      {0.1, 1, 3, 48},       // delay complier
  };
  return c;
}

// Same types but effects vanish past the first year; the stacked any-exposure
// model is correctly specified (null of the over-identification test holds).
inline DgpConfig ref_b() {
  DgpConfig c = ref_a();
  c.lambda = Eigen::Vector3d(4, 0, 0);
  return c;
}

// Five-wave configuration tuned so that wave-level exposure rates follow the
// published trial pattern: control-arm rate rising from 0.12 to 0.29, treated
// rate roughly constant near 0.8, first stage declining 0.68 -> 0.54.
// Crossovers are sicker than compliers, so as-treated estimates drift down.
inline DgpConfig paper_calibrated() {
  DgpConfig c;
  c.w_bar = 5;
  c.p_assign = 0.5;
  c.lambda.setZero(5);
  c.lambda[0] = 4;
  c.noise_sd = 14;
  c.covariate_noise_sd = 10;
  c.n_regions = 3;
  c.types = {
      {0.54, 1, kNever, 50},      // compliers never treated under control
      {0.04, 1, 2, 42},           // delay compliers, crossover at wave 2
      {0.04, 1, 3, 42},
      {0.03, 1, 4, 42},
      {0.03, 1, 5, 42},
      {0.12, 1, 1, 38},           // immediate always-takers
      {0.0075, 2, 2, 36},         // later always-takers
      {0.0075, 3, 3, 36},
      {0.0075, 4, 4, 36},
      {0.0075, 5, 5, 36},
      {0.17, kNever, kNever, 48}, // never-takers
  };
  return c;
}

inline DgpConfig preset(const std::string& name) {
  if (name == "refA") return ref_a();
  if (name == "refB") return ref_b();
  if (name == "paper_calibrated") return paper_calibrated();
  fail("unknown preset '" + name + "' (expected refA, refB, or paper_calibrated)");
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// Draws n participants. Each participant uses its own counter-derived RNG
// stream, so the dataset is identical for a given (seed, n) no matter how the
// loop is scheduled.
inline PanelDataset sample_dataset(const DgpConfig& cfg, long n) {
  cfg.validate();
  require(n >= 1, "n must be >= 1");

  std::vector<double> cum_share;
  double s = 0;
  for (const auto& t : cfg.types) cum_share.push_back(s += t.share);
  cum_share.back() = 1.0;

  PanelDataset d;
  d.w_bar = cfg.w_bar;
  d.covariate_names.push_back("x_base");
  for (int r = 1; r < cfg.n_regions; ++r)
    d.covariate_names.push_back("region=r" + std::to_string(r));
  d.participants.resize(n);

  for (long i = 0; i < n; ++i) {
    std::mt19937_64 rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const double u_type = unif(rng);
    std::size_t k = 0;
    while (k + 1 < cum_share.size() && u_type >= cum_share[k]) ++k;
    const LatentType& ty = cfg.types[k];

    ParticipantRecord& p = d.participants[i];
    p.id = i + 1;
    p.z = unif(rng) < cfg.p_assign ? 1 : 0;
    p.revasc_wave = cfg.first_treated(p.z, ty);

    p.covariates.push_back(ty.mu + cfg.covariate_noise_sd * normal(rng));
    if (cfg.n_regions >= 2) {
      std::uniform_int_distribution<int> region(0, cfg.n_regions - 1);
      const int reg = region(rng);
      for (int r = 1; r < cfg.n_regions; ++r)
        p.covariates.push_back(reg == r ? 1.0 : 0.0);
    }

    p.outcomes.assign(cfg.w_bar, std::nullopt);
    double carry = 0;
    for (int w = 1; w <= cfg.w_bar; ++w) {
      const double shock = normal(rng);
      if (cfg.noise_ar1 > 0 && w > 1)
        carry = cfg.noise_ar1 * carry +
                std::sqrt(1 - cfg.noise_ar1 * cfg.noise_ar1) * shock;
      else
        carry = shock;
      const int t = p.exposure(w);
      p.outcomes[w - 1] = cfg.outcome_mean(ty, w, t, p.z) + cfg.noise_sd * carry;
    }
    for (int w = 1; w <= cfg.w_bar; ++w) {
      const double u_attr = unif(rng);
      if (u_attr < cfg.attrition(w, p.z)) p.outcomes[w - 1] = std::nullopt;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Exact population oracle
// ---------------------------------------------------------------------------

struct OracleWave {
  int wave = 0;
  double control_rate = 0, treated_rate = 0, first_stage = 0;
  double itt = 0;  // rho_w
  double y_mean_z1 = 0, y_mean_z0 = 0;
  double tau = 0;
  bool tau_defined = false, tau_valid = false;
  double as_treated_any = 0;  // per-wave any-exposure OLS gap

  // latent-group covariate means (type-mean form)
  double later_at_x = 0;
  bool later_at_defined = false;
  double marginal_at_x = 0, pi_w = 0;
  bool marginal_at_defined = false;
  double any_complier_x = 0, any_at_x = 0;
  bool any_at_defined = false;
  double at_share_treated = 0, any_at_share_treated = 0;

  // potential-outcome marginal means
  double complier_y = 0;       // E[Y_w(w) | immediate compliers]
  double immediate_at_y = 0;
  bool immediate_at_y_defined = false;
  double later_at_y = 0;
  bool later_at_y_defined = false;
  double marginal_at_y = 0;
  bool marginal_at_y_defined = false;
};

struct OracleReport {
  int w_bar = 0;
  double p_assign = 0;
  bool assumptions_hold = false;  // wave_drift = direct_z_effect = 0, no defiers
  bool imco_satisfied = false;    // every complier type treated at wave 1 under Z=1
  Eigen::VectorXd lambda_input;
  Eigen::VectorXd lambda;   // what stacked 2SLS identifies: Pi^{-1} rho
  Eigen::VectorXd Lambda;   // cumulative sums of lambda
  Eigen::VectorXd rho;      // per-wave reduced forms
  Eigen::MatrixXd pi;       // complier-margin weights, lower-triangular
  double immediate_complier_x = 0;
  double immediate_at_x = 0;
  bool immediate_at_defined = false;
  std::vector<OracleWave> waves;
  // (w, t) tables; NaN where the defining cell is empty. Row w-1, column t.
  Eigen::MatrixXd disagg_complier_x;
  Eigen::MatrixXd disagg_complier_y;  // E[Y_w(t) | moved from t]
  Eigen::MatrixXd disagg_atnt_x;
  Eigen::MatrixXd disagg_atnt_y;
  // population coefficients of the stacked as-treated OLS on exposure levels
  Eigen::VectorXd ols_levels;
  std::vector<int> ols_level_list;
};

// Computes every estimand in closed form from the finite type distribution.
// Estimator-side quantities (rho, Pi, lambda, tau, OLS gaps) are what the
// corresponding sample estimators converge to, including under the violation
// toggles; the validity flags say whether those limits carry their intended
// causal interpretation.
inline OracleReport population_oracle(const DgpConfig& cfg) {
  cfg.validate();
  OracleReport rep;
  rep.w_bar = cfg.w_bar;
  rep.p_assign = cfg.p_assign;
  rep.assumptions_hold =
      cfg.wave_drift == 0 && cfg.direct_z_effect == 0 && !cfg.allow_defiers;
  rep.imco_satisfied = true;
  for (const auto& t : cfg.types)
    if (t.r1 != t.r0 && t.r1 != 1) rep.imco_satisfied = false;
  rep.lambda_input = cfg.lambda;

  const int W = cfg.w_bar;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Complier-margin weights and reduced forms.
  rep.pi.setZero(W, W);
  rep.rho.setZero(W);
  for (int w = 1; w <= W; ++w)
    for (const auto& ty : cfg.types) {
      const int t1 = exposure_at(ty.r1, w);
      const int t0 = exposure_at(ty.r0, w);
      for (int t = 1; t <= w; ++t)
        if (t1 >= t && t > t0) rep.pi(w - 1, t - 1) += ty.share;
      rep.rho[w - 1] += ty.share * (cfg.outcome_mean(ty, w, t1, 1) -
                                    cfg.outcome_mean(ty, w, t0, 0));
    }
  for (int w = 0; w < W; ++w)
    require(std::abs(rep.pi(w, w)) > 1e-12, "singular Pi: no wave-1 compliers");
  rep.lambda = rep.pi.triangularView<Eigen::Lower>().solve(rep.rho);
  rep.Lambda.resize(W);
  double run = 0;
  for (int t = 0; t < W; ++t) rep.Lambda[t] = (run += rep.lambda[t]);

  // Wave-1 latent groups (covariate form uses the type mean as X).
  {
    double num1 = 0, num0 = 0, den1 = 0, den0 = 0, at_mass = 0, at_mu = 0;
    for (const auto& ty : cfg.types) {
      if (exposure_at(ty.r1, 1) == 1) { num1 += ty.share * ty.mu; den1 += ty.share; }
      if (exposure_at(ty.r0, 1) == 1) {
        num0 += ty.share * ty.mu;
        den0 += ty.share;
        at_mass += ty.share;
        at_mu += ty.share * ty.mu;
      }
    }
    rep.immediate_complier_x = formulas::iv_ratio(num1, num0, den1, den0);
    rep.immediate_at_defined = at_mass > 0;
    rep.immediate_at_x = at_mass > 0 ? at_mu / at_mass : nan;
  }

  rep.disagg_complier_x.setConstant(W, W, nan);
  rep.disagg_complier_y.setConstant(W, W, nan);
  rep.disagg_atnt_x.setConstant(W, W, nan);
  rep.disagg_atnt_y.setConstant(W, W, nan);

  for (int w = 1; w <= W; ++w) {
    OracleWave ow;
    ow.wave = w;
    double treated1 = 0, treated0 = 0;
    for (const auto& ty : cfg.types) {
      if (exposure_at(ty.r1, w) > 0) treated1 += ty.share;
      if (exposure_at(ty.r0, w) > 0) treated0 += ty.share;
    }
    ow.treated_rate = treated1;
    ow.control_rate = treated0;
    ow.first_stage = treated1 - treated0;
    ow.itt = rep.rho[w - 1];
    for (const auto& ty : cfg.types) {
      ow.y_mean_z1 += ty.share * cfg.outcome_mean(ty, w, exposure_at(ty.r1, w), 1);
      ow.y_mean_z0 += ty.share * cfg.outcome_mean(ty, w, exposure_at(ty.r0, w), 0);
    }

    ow.tau_defined = std::abs(ow.first_stage) > 1e-12;
    if (ow.tau_defined) ow.tau = ow.itt / ow.first_stage;
    ow.tau_valid = rep.assumptions_hold && ow.tau_defined;
    for (int t = 2; t <= w; ++t)
      if (cfg.lambda[t - 1] != 0) ow.tau_valid = false;

    // As-treated any-exposure gap, weighting cells by observation probability.
    {
      double sy1 = 0, m1 = 0, sy0 = 0, m0 = 0;
      for (int z = 0; z < 2; ++z) {
        const double pz = z ? cfg.p_assign : 1 - cfg.p_assign;
        const double keep = 1 - cfg.attrition(w, z);
        for (const auto& ty : cfg.types) {
          const int t = exposure_at(cfg.first_treated(z, ty), w);
          const double wgt = ty.share * pz * keep;
          const double y = cfg.outcome_mean(ty, w, t, z);
          if (t > 0) { sy1 += wgt * y; m1 += wgt; }
          else { sy0 += wgt * y; m0 += wgt; }
        }
      }
      if (m1 > 0 && m0 > 0) ow.as_treated_any = sy1 / m1 - sy0 / m0;
      else ow.as_treated_any = nan;
    }

    // Later and marginal always-takers (covariate and outcome forms).
    {
      double lat_mass = 0, lat_mu = 0, lat_y = 0;
      double a = 0, g_mu = 0, g_y = 0;  // Z=0, T_w = w
      for (const auto& ty : cfg.types) {
        const int t1 = exposure_at(ty.r1, w);
        if (t1 >= 1 && t1 < w) {
          lat_mass += ty.share;
          lat_mu += ty.share * ty.mu;
          lat_y += ty.share * cfg.outcome_mean(ty, w, t1, 1);
        }
        const int t0 = exposure_at(ty.r0, w);
        if (t0 == w) {
          a += ty.share;
          g_mu += ty.share * ty.mu;
          g_y += ty.share * cfg.outcome_mean(ty, w, w, 0);
        }
      }
      ow.later_at_defined = lat_mass > 0;
      if (ow.later_at_defined) {
        ow.later_at_x = lat_mu / lat_mass;
        ow.later_at_y = lat_y / lat_mass;
        ow.later_at_y_defined = true;
      } else {
        ow.later_at_x = ow.later_at_y = nan;
      }
      ow.immediate_at_y_defined = a > 0;
      ow.immediate_at_y = a > 0 ? g_y / a : nan;
      const double b = lat_mass;
      ow.marginal_at_defined = a + b > 0;
      if (ow.marginal_at_defined) {
        ow.pi_w = formulas::pi_share(a, b);
        ow.marginal_at_x = formulas::marginal_at(g_mu, lat_mu, a, b);
        ow.marginal_at_y = formulas::marginal_at(g_y, lat_y, a, b);
        ow.marginal_at_y_defined = true;
      } else {
        ow.pi_w = ow.marginal_at_x = ow.marginal_at_y = nan;
      }
      const double treated_mass = cfg.p_assign * treated1 + (1 - cfg.p_assign) * treated0;
      ow.at_share_treated = treated_mass > 0 ? (a + b) / treated_mass : nan;
      ow.any_at_share_treated = treated_mass > 0 ? treated0 / treated_mass : nan;
    }

    // Any-exposure groups.
    {
      double num1 = 0, num0 = 0, at_mu = 0;
      for (const auto& ty : cfg.types) {
        if (exposure_at(ty.r1, w) > 0) num1 += ty.share * ty.mu;
        if (exposure_at(ty.r0, w) > 0) { num0 += ty.share * ty.mu; at_mu += ty.share * ty.mu; }
      }
      ow.any_complier_x = ow.first_stage != 0
                              ? formulas::iv_ratio(num1, num0, treated1, treated0)
                              : nan;
      ow.any_at_defined = treated0 > 0;
      ow.any_at_x = treated0 > 0 ? at_mu / treated0 : nan;
    }

    // E[Y_w(w) | immediate compliers] via the wave-1 indicator ratio.
    {
      double num1 = 0, num0 = 0, den1 = 0, den0 = 0;
      for (const auto& ty : cfg.types) {
        if (exposure_at(ty.r1, 1) == 1) {
          num1 += ty.share * cfg.outcome_mean(ty, w, w, 1);
          den1 += ty.share;
        }
        if (exposure_at(ty.r0, 1) == 1) {
          num0 += ty.share * cfg.outcome_mean(ty, w, w, 0);
          den0 += ty.share;
        }
      }
      ow.complier_y = formulas::iv_ratio(num1, num0, den1, den0);
    }

    // Disaggregated complier and always-/never-taker cells.
    for (int t = 0; t <= w - 1; ++t) {
      double n1 = 0, n0 = 0, x1 = 0, x0 = 0, y1 = 0, y0 = 0;
      for (const auto& ty : cfg.types) {
        if (exposure_at(ty.r1, w) == t) {
          n1 += ty.share;
          x1 += ty.share * ty.mu;
          y1 += ty.share * cfg.outcome_mean(ty, w, t, 1);
        }
        if (exposure_at(ty.r0, w) == t) {
          n0 += ty.share;
          x0 += ty.share * ty.mu;
          y0 += ty.share * cfg.outcome_mean(ty, w, t, 0);
        }
      }
      if (n1 != n0) {
        rep.disagg_complier_x(w - 1, t) = formulas::iv_ratio(x1, x0, n1, n0);
        rep.disagg_complier_y(w - 1, t) = formulas::iv_ratio(y1, y0, n1, n0);
      }
      if (n1 > 0) {
        rep.disagg_atnt_x(w - 1, t) = x1 / n1;
        rep.disagg_atnt_y(w - 1, t) = y1 / n1;
      }
    }
    rep.waves.push_back(ow);
  }

  // Population coefficients of the stacked as-treated OLS on exposure levels
  // (intercept + wave dummies + level indicators), via the exact weighted
  // Gram system over (type, arm, wave) cells.
  {
    std::vector<int> levels;
    for (int t = 1; t <= W; ++t) {
      double mass = 0;
      for (int z = 0; z < 2; ++z)
        for (int w = 1; w <= W; ++w)
          for (const auto& ty : cfg.types)
            if (exposure_at(cfg.first_treated(z, ty), w) == t)
              mass += ty.share * (z ? cfg.p_assign : 1 - cfg.p_assign) *
                      (1 - cfg.attrition(w, z));
      if (mass > 0) levels.push_back(t);
    }
    const int k = 1 + (W - 1) + static_cast<int>(levels.size());
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd moment = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd x(k);
    for (int z = 0; z < 2; ++z) {
      const double pz = z ? cfg.p_assign : 1 - cfg.p_assign;
      for (int w = 1; w <= W; ++w) {
        const double keep = 1 - cfg.attrition(w, z);
        for (const auto& ty : cfg.types) {
          const double wgt = ty.share * pz * keep;
          if (wgt == 0) continue;
          const int t = exposure_at(cfg.first_treated(z, ty), w);
          x.setZero();
          x[0] = 1;
          if (w >= 2) x[w - 1] = 1;
          for (std::size_t j = 0; j < levels.size(); ++j)
            if (levels[j] == t) x[W + static_cast<int>(j)] = 1;
          gram.noalias() += wgt * x * x.transpose();
          moment.noalias() += wgt * cfg.outcome_mean(ty, w, t, z) * x;
        }
      }
    }
    Eigen::VectorXd beta = gram.colPivHouseholderQr().solve(moment);
    rep.ols_levels.resize(levels.size());
    for (std::size_t j = 0; j < levels.size(); ++j)
      rep.ols_levels[j] = beta[W + static_cast<int>(j)];
    rep.ols_level_list = levels;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Cluster bootstrap
// ---------------------------------------------------------------------------

// Resample participants with replacement (the pairs cluster bootstrap) and
// return the standard deviation of each statistic component across draws.
template <class Fn>
inline std::vector<double> bootstrap_se(const PanelDataset& d, int b_draws,
                                        std::uint64_t seed, Fn statistic) {
  require(b_draws >= 2, "bootstrap needs at least 2 draws");
  const long n = static_cast<long>(d.participants.size());
  std::vector<std::vector<double>> draws;
  for (int b = 0; b < b_draws; ++b) {
    std::mt19937_64 rng(substream_seed(seed, 0xb001 + static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<long> pick(0, n - 1);
    PanelDataset r;
    r.w_bar = d.w_bar;
    r.covariate_names = d.covariate_names;
    r.participants.reserve(n);
    for (long i = 0; i < n; ++i) {
      ParticipantRecord p = d.participants[pick(rng)];
      p.id = i + 1;
      r.participants.push_back(std::move(p));
    }
    draws.push_back(statistic(r));
  }
  const std::size_t k = draws.front().size();
  std::vector<double> se(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0;
    for (const auto& dr : draws) m += dr[j];
    m /= b_draws;
    double v = 0;
    for (const auto& dr : draws) v += (dr[j] - m) * (dr[j] - m);
    se[j] = std::sqrt(v / (b_draws - 1));
  }
  return se;
}

// ---------------------------------------------------------------------------
// Monte Carlo study
// ---------------------------------------------------------------------------

struct McOptions {
  std::vector<std::string> controls;
  bool incremental = true;
  bool cumulative = true;
  bool any_stacked = true;
  bool wald1 = true;
  bool hausman = true;
  int threads = 0;  // 0 = hardware concurrency
};

struct McCoefSummary {
  std::string name;
  double truth = 0, mean_estimate = 0, bias = 0, emp_sd = 0, mean_se = 0,
         coverage95 = 0;
};

struct McTestSummary {
  std::string name;
  double rejection_rate_5pct = 0;
};

struct McSummary {
  long n = 0;
  int reps = 0;
  int failures = 0;
  std::vector<McCoefSummary> coefs;
  std::vector<McTestSummary> tests;
  std::vector<std::string> failure_notes;
};

namespace detail {

struct McRep {
  bool ok = false;
  std::string error;
  std::vector<double> est, se;        // aligned with coef slot names
  std::vector<double> p_values;       // aligned with test slot names
};

}  // namespace detail

// Runs sample_dataset + the selected estimators per replication, each with an
// independent sub-seed, and compares against the population oracle. Bias,
// spread, reported-SE calibration, CI coverage, and 5%-level test rejection
// rates come out per coefficient/test.
inline McSummary mc_study(const DgpConfig& cfg, long n, int reps,
                          const McOptions& opt = {}) {
  require(reps >= 2, "mc_study needs reps >= 2");
  const OracleReport oracle = population_oracle(cfg);
  const int W = cfg.w_bar;

  std::vector<std::string> coef_names;
  std::vector<double> truths;
  if (opt.wald1) { coef_names.push_back("wald_late1"); truths.push_back(oracle.lambda[0]); }
  if (opt.incremental)
    for (int t = 1; t <= W; ++t) {
      coef_names.push_back("lambda" + std::to_string(t));
      truths.push_back(oracle.lambda[t - 1]);
    }
  if (opt.cumulative)
    for (int t = 1; t <= W; ++t) {
      coef_names.push_back("Lambda" + std::to_string(t));
      truths.push_back(oracle.Lambda[t - 1]);
    }
  if (opt.any_stacked) {
    coef_names.push_back("tau_stacked");
    // A constant-tau truth only exists when every wave satisfies the
    // any-exposure conditions; otherwise bias/coverage are not meaningful.
    bool all_valid = true;
    for (const auto& w : oracle.waves) all_valid = all_valid && w.tau_valid;
    truths.push_back(all_valid ? oracle.waves[0].tau
                               : std::numeric_limits<double>::quiet_NaN());
  }
  std::vector<std::string> test_names;
  if (opt.incremental) test_names.push_back("equality_lambda_all");
  if (opt.cumulative) {
    test_names.push_back("equality_Lambda_all");
    if (W >= 3) test_names.push_back("equality_Lambda_tail");
  }
  if (opt.any_stacked) test_names.push_back("hansen_j");
  if (opt.hausman) test_names.push_back("hausman_joint");

  std::vector<detail::McRep> results(reps);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) return;
      detail::McRep& out = results[r];
      try {
        DgpConfig c = cfg;
        c.seed = substream_seed(cfg.seed, 0x4d43 + static_cast<std::uint64_t>(r));
        PanelDataset ds = sample_dataset(c, n);
        auto push_level = [&](const ExposureEffects& fx, int t) {
          const std::string nm =
              (fx.kind == ExposureKind::incremental ? "exp_ge" : "exp_eq") +
              std::to_string(t);
          const int i = fx.est.index_of(nm);
          out.est.push_back(fx.est.coef[i]);
          out.se.push_back(fx.est.se(i));
        };
        if (opt.wald1) {
          auto w1 = wald_late_wave1(ds);
          out.est.push_back(w1.coef[0]);
          out.se.push_back(w1.se(0));
        }
        std::optional<ExposureEffects> inc, cum;
        if (opt.incremental) {
          inc = incremental_effects(ds, opt.controls);
          for (int t = 1; t <= W; ++t) push_level(*inc, t);
        }
        if (opt.cumulative || opt.hausman) cum = cumulative_effects(ds, opt.controls);
        if (opt.cumulative)
          for (int t = 1; t <= W; ++t) push_level(*cum, t);
        std::optional<StackedAnyExposure> any;
        if (opt.any_stacked) {
          any = any_exposure_stacked(ds, opt.controls);
          const int i = any->est.index_of("any_exposure");
          out.est.push_back(any->est.coef[i]);
          out.se.push_back(any->est.se(i));
        }
        if (opt.incremental)
          out.p_values.push_back(inc->equality_all ? inc->equality_all->p_value : 1.0);
        if (opt.cumulative) {
          out.p_values.push_back(cum->equality_all ? cum->equality_all->p_value : 1.0);
          if (W >= 3)
            out.p_values.push_back(cum->equality_tail ? cum->equality_tail->p_value : 1.0);
        }
        if (opt.any_stacked) out.p_values.push_back(any->over_id.p_value);
        if (opt.hausman) {
          auto ols_fit = as_treated_levels(ds, opt.controls);
          auto diff = joint_difference_test(cum->est, ols_fit.est, cum->level_names);
          out.p_values.push_back(diff.joint.p_value);
        }
        out.ok = true;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };
  int n_threads = opt.threads > 0 ? opt.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, reps));
  {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McSummary s;
  s.n = n;
  s.reps = reps;
  for (const auto& r : results)
    if (!r.ok) {
      ++s.failures;
      if (s.failure_notes.size() < 5) s.failure_notes.push_back(r.error);
    }
  if (s.failures * 2 > reps) {
    std::string msg = "mc_study: estimator failure rate above 50% (" +
                      std::to_string(s.failures) + "/" + std::to_string(reps) + ")";
    for (const auto& note : s.failure_notes) msg += "\n  " + note;
    fail(msg);
  }
  const int ok = reps - s.failures;
  for (std::size_t j = 0; j < coef_names.size(); ++j) {
    McCoefSummary c;
    c.name = coef_names[j];
    c.truth = truths[j];
    double sum = 0, sum_se = 0;
    for (const auto& r : results)
      if (r.ok) { sum += r.est[j]; sum_se += r.se[j]; }
    c.mean_estimate = sum / ok;
    c.mean_se = sum_se / ok;
    c.bias = c.mean_estimate - c.truth;
    double v = 0;
    long covered = 0;
    for (const auto& r : results)
      if (r.ok) {
        v += (r.est[j] - c.mean_estimate) * (r.est[j] - c.mean_estimate);
        if (std::abs(r.est[j] - c.truth) <= kZ975 * r.se[j]) ++covered;
      }
    c.emp_sd = ok > 1 ? std::sqrt(v / (ok - 1)) : 0;
    c.coverage95 = std::isnan(c.truth)
                       ? std::numeric_limits<double>::quiet_NaN()
                       : static_cast<double>(covered) / ok;
    s.coefs.push_back(c);
  }
  for (std::size_t j = 0; j < test_names.size(); ++j) {
    McTestSummary t;
    t.name = test_names[j];
    long rej = 0;
    for (const auto& r : results)
      if (r.ok && r.p_values[j] < 0.05) ++rej;
    t.rejection_rate_5pct = static_cast<double>(rej) / ok;
    s.tests.push_back(t);
  }
  return s;
}

}  // namespace dyniv
