// Command-line surface for the dyniv library: simulate synthetic trials with
// an exact oracle sidecar, run the estimator battery on long-format CSVs,
// characterize latent compliance groups, and run Monte Carlo studies.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dyniv/dyniv.hpp"

namespace fs = std::filesystem;
using dyniv::json;

namespace {

// Every output goes through write-to-temp-then-rename, so an interrupted run
// never leaves a truncated file behind.
void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    dyniv::require(out.good(), "cannot open for writing: " + tmp.string());
    out << content;
    dyniv::require(out.good(), "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// "1..5" or "1,3,4".
std::vector<int> parse_waves(const std::string& s) {
  std::vector<int> out;
  const auto dots = s.find("..");
  if (dots != std::string::npos) {
    const int lo = std::stoi(s.substr(0, dots));
    const int hi = std::stoi(s.substr(dots + 2));
    dyniv::require(lo >= 1 && hi >= lo, "bad wave range '" + s + "'");
    for (int w = lo; w <= hi; ++w) out.push_back(w);
  } else {
    for (const auto& tok : split_list(s)) out.push_back(std::stoi(tok));
  }
  return out;
}

struct ConfigSource {
  std::string preset_name;
  std::string config_path;

  dyniv::DgpConfig load() const {
    dyniv::require(preset_name.empty() || config_path.empty(),
                   "--preset and --config are mutually exclusive");
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      dyniv::require(in.good(), "cannot open config: " + config_path);
      json j = json::parse(in);
      return dyniv::dgp_from_json(j);
    }
    dyniv::require(!preset_name.empty(), "need --preset or --config");
    return dyniv::preset(preset_name);
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset_name,
                    "named configuration: refA, refB, paper_calibrated")
        ->envname("DYNIV_PRESET");
    cmd->add_option("--config", config_path, "DgpConfig JSON file")
        ->envname("DYNIV_CONFIG");
  }
};

std::string header_line(const std::string& path) {
  std::ifstream in(path);
  dyniv::require(in.good(), "cannot open CSV file: " + path);
  std::string line;
  dyniv::require(static_cast<bool>(std::getline(in, line)), "empty CSV: " + path);
  return line;
}

bool header_has_column(const std::string& header, const std::string& name) {
  for (const auto& h : dyniv::detail::split_csv_line(header))
    if (h == name) return true;
  return false;
}

// Shared ingestion for estimate/characterize.
dyniv::PanelDataset load_panel(const std::string& input, const std::string& outcome,
                               const std::string& cluster, const std::string& waves) {
  const std::string header = header_line(input);
  dyniv::require(header_has_column(header, outcome),
                 "outcome column '" + outcome + "' not found in " + input);
  dyniv::CsvSchema schema;
  schema.y = outcome;
  auto d = dyniv::ingest_csv(input, schema);
  if (!waves.empty()) d = dyniv::restrict_waves(d, parse_waves(waves));
  if (cluster != "id") d.cluster_covariate = d.covariate_index(cluster);
  return d;
}

int cmd_simulate(const ConfigSource& src, long n, std::uint64_t seed,
                 const std::string& out_path) {
  auto cfg = src.load();
  cfg.seed = seed;
  dyniv::require(n >= 1, "--n must be >= 1");
  auto oracle = dyniv::population_oracle(cfg);
  auto d = dyniv::sample_dataset(cfg, n);

  std::ostringstream csv;
  dyniv::emit_csv_stream(d, csv);
  write_file(out_path, csv.str());
  json sidecar{{"config", dyniv::to_json(cfg)}, {"oracle", dyniv::to_json(oracle)}};
  write_json(out_path + ".oracle.json", sidecar);
  std::cout << "wrote " << out_path << " (" << n << " participants, "
            << cfg.w_bar << " waves) and " << out_path << ".oracle.json\n";
  return 0;
}

int cmd_estimate(const std::string& input, const std::string& outdir,
                 const std::string& outcome, const std::string& controls_arg,
                 const std::string& cluster, const std::string& waves,
                 const std::string& format, bool bootstrap, int bootstrap_reps,
                 std::uint64_t seed) {
  auto d = load_panel(input, outcome, cluster, waves);
  const auto controls = split_list(controls_arg);
  const fs::path dir(outdir);
  const bool as_csv = format == "csv";

  auto summary = dyniv::wave_summary(d);
  if (as_csv) write_file(dir / "wave_summary.csv", to_csv(summary));
  else write_json(dir / "wave_summary.json", to_json(summary));

  auto wald1 = dyniv::wald_late_wave1(d);
  json estimates{{"wald_late1", to_json(wald1)}};
  json tests = json::object();

  if (d.w_bar >= 2) {
    auto series = dyniv::any_exposure_series(d, controls);
    write_file(dir / "figure_any_exposure.csv", figure_any_exposure_csv(series));
    auto inc = dyniv::incremental_effects(d, controls);
    auto cum = dyniv::cumulative_effects(d, controls);
    write_file(dir / "figure_cumulative.csv", figure_cumulative_csv(cum));
    auto acr = dyniv::acr_weights(d);
    auto haus = dyniv::hausman_table(d, controls);
    write_file(dir / "hausman.csv", to_csv(haus));
    if (!as_csv) write_json(dir / "hausman.json", to_json(haus));

    estimates["incremental"] = to_json(inc);
    estimates["cumulative"] = to_json(cum);
    estimates["any_exposure_stacked"] = to_json(series.stacked->est);
    estimates["acr_weights"] = to_json(acr);
    estimates["constant_effects_rejected"] = series.constant_effects_rejected;
    tests["equality_lambda_all"] =
        inc.equality_all ? to_json(*inc.equality_all) : json(nullptr);
    tests["equality_Lambda_all"] =
        cum.equality_all ? to_json(*cum.equality_all) : json(nullptr);
    tests["equality_Lambda_tail"] =
        cum.equality_tail ? to_json(*cum.equality_tail) : json(nullptr);
    tests["over_identification"] = to_json(series.stacked->over_id);
    tests["hausman_joint"] = to_json(haus.joint);

    if (bootstrap) {
      auto names = cum.level_names;
      auto boot = dyniv::bootstrap_se(d, bootstrap_reps, seed,
                                      [&](const dyniv::PanelDataset& b) {
        auto iv = dyniv::cumulative_effects(b, controls);
        auto ols_fit = dyniv::as_treated_levels(b, controls);
        std::vector<double> stat;
        for (const auto& nm : names)
          stat.push_back(iv.est.coef[iv.est.index_of(nm)] -
                         ols_fit.est.coef[ols_fit.est.index_of(nm)]);
        return stat;
      });
      json rows = json::array();
      for (std::size_t i = 0; i < names.size(); ++i)
        rows.push_back(json{{"level", haus.rows[i].level},
                            {"diff", haus.rows[i].diff},
                            {"se_influence", haus.rows[i].diff_se},
                            {"se_bootstrap", boot[i]}});
      write_json(dir / "hausman_bootstrap.json",
                 json{{"reps", bootstrap_reps}, {"rows", rows}});
    }
  } else {
    estimates["notice"] =
        "insufficient waves: stacked incremental/cumulative/any-exposure "
        "estimators need at least 2 waves; wave-1 Wald estimate emitted";
  }
  write_json(dir / "estimates.json", estimates);
  write_json(dir / "tests.json", tests);
  std::cout << "estimate: wrote reports to " << dir.string() << "\n";
  return 0;
}

int cmd_characterize(const std::string& input, const std::string& outdir,
                     const std::string& outcome, const std::string& covariates_arg,
                     const std::string& cluster, const std::string& waves,
                     const std::string& format, bool bootstrap, int bootstrap_reps,
                     std::uint64_t seed) {
  auto d = load_panel(input, outcome, cluster, waves);
  std::vector<std::string> covariates = split_list(covariates_arg);
  if (covariates.empty()) covariates = d.covariate_names;
  for (const auto& c : covariates) d.covariate_index(c);  // errors on unknowns

  const fs::path dir(outdir);
  auto table = dyniv::group_means_table(d, covariates);
  if (format == "csv") write_file(dir / "group_means.csv", to_csv(table));
  else write_json(dir / "group_means.json", to_json(table));

  auto diag = dyniv::imco_diagnostic(d);
  write_file(dir / "figure_histogram.csv", histogram_csv(diag));
  write_json(dir / "imco.json", to_json(diag));

  if (bootstrap) {
    json rows = json::array();
    for (const auto& cov : covariates) {
      const auto resp = dyniv::Response::cov(cov);
      auto ic = dyniv::immediate_complier_mean(d, resp);
      auto boot = dyniv::bootstrap_se(d, bootstrap_reps, seed,
                                      [&](const dyniv::PanelDataset& b) {
        return std::vector<double>{dyniv::immediate_complier_mean(b, resp).value};
      });
      rows.push_back(json{{"covariate", cov},
                          {"immediate_complier", ic.value},
                          {"se_delta", ic.se},
                          {"se_bootstrap", boot[0]}});
    }
    write_json(dir / "group_means_bootstrap.json",
               json{{"reps", bootstrap_reps}, {"rows", rows}});
  }
  std::cout << "characterize: wrote reports to " << dir.string() << "\n";
  return 0;
}

int cmd_oracle(const ConfigSource& src, const std::string& out_path) {
  auto cfg = src.load();
  auto rep = dyniv::population_oracle(cfg);
  write_json(out_path, to_json(rep));
  std::cout << "lambda =";
  for (long t = 0; t < rep.lambda.size(); ++t) std::cout << ' ' << rep.lambda[t];
  std::cout << "\nLambda =";
  for (long t = 0; t < rep.Lambda.size(); ++t) std::cout << ' ' << rep.Lambda[t];
  std::cout << "\nassumptions_hold = " << (rep.assumptions_hold ? "yes" : "no")
            << ", imco = " << (rep.imco_satisfied ? "yes" : "no") << "\nwrote "
            << out_path << "\n";
  return 0;
}

int cmd_mc(const ConfigSource& src, long n, int reps, std::uint64_t seed,
           const std::string& controls_arg, const std::string& estimators_arg,
           int threads, const std::string& out_path) {
  auto cfg = src.load();
  cfg.seed = seed;
  dyniv::McOptions opt;
  opt.controls = split_list(controls_arg);
  opt.threads = threads;
  if (!estimators_arg.empty()) {
    opt.incremental = opt.cumulative = opt.any_stacked = opt.wald1 = opt.hausman = false;
    for (const auto& tok : split_list(estimators_arg)) {
      if (tok == "incremental") opt.incremental = true;
      else if (tok == "cumulative") opt.cumulative = true;
      else if (tok == "any") opt.any_stacked = true;
      else if (tok == "wald1") opt.wald1 = true;
      else if (tok == "hausman") opt.hausman = true;
      else dyniv::fail("unknown estimator '" + tok +
                       "' (expected incremental, cumulative, any, wald1, hausman)");
    }
  }
  auto s = dyniv::mc_study(cfg, n, reps, opt);
  write_json(out_path, to_json(s));
  std::cout << "mc: n=" << n << " reps=" << reps << " failures=" << s.failures << "\n";
  for (const auto& c : s.coefs)
    std::cout << "  " << c.name << ": truth=" << c.truth << " bias=" << c.bias
              << " emp_sd=" << c.emp_sd << " mean_se=" << c.mean_se
              << " cover95=" << c.coverage95 << "\n";
  for (const auto& t : s.tests)
    std::cout << "  " << t.name << ": reject@5% = " << t.rejection_rate_5pct << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dyniv: instrumental-variables estimation for randomized trials with "
      "time-varying absorbing exposure"};
  app.require_subcommand(1);
  app.fallthrough();  // let subcommands use the global --output-dir

  std::string outdir = ".";
  app.add_option("--output-dir", outdir, "directory for output files")
      ->envname("DYNIV_OUTPUT_DIR");

  // simulate -----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "draw a synthetic trial dataset "
                                             "with an exact oracle sidecar");
  ConfigSource sim_src;
  sim_src.attach(sim);
  long sim_n = 0;
  std::uint64_t sim_seed = dyniv::kDefaultSeed;
  std::string sim_out;
  sim->add_option("--n", sim_n, "number of participants")->required()
      ->envname("DYNIV_N");
  sim->add_option("--seed", sim_seed,
                  "master RNG seed (fixed default, never wall-clock)")
      ->envname("DYNIV_SEED");
  sim->add_option("--out", sim_out, "output CSV path (default <output-dir>/dataset.csv)")
      ->envname("DYNIV_OUT");

  // estimate -----------------------------------------------------------------
  auto* est = app.add_subcommand("estimate", "run the ITT/IV/OLS estimator "
                                             "battery on a long-format CSV");
  std::string in_path, outcome = "y", controls, cluster = "id", waves, format = "json";
  bool bootstrap = false;
  int bootstrap_reps = 200;
  std::uint64_t est_seed = dyniv::kDefaultSeed;
  est->add_option("--input", in_path, "long-format CSV")->required()
      ->envname("DYNIV_INPUT");
  est->add_option("--outcome", outcome, "outcome column name")
      ->envname("DYNIV_OUTCOME");
  est->add_option("--controls", controls, "comma-separated control covariates")
      ->envname("DYNIV_CONTROLS");
  est->add_option("--cluster", cluster,
                  "cluster column: 'id' or an integer-valued covariate")
      ->envname("DYNIV_CLUSTER");
  est->add_option("--waves", waves, "wave subset, e.g. 1..5 or 1,2,3")
      ->envname("DYNIV_WAVES");
  est->add_option("--format", format, "table format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->envname("DYNIV_FORMAT");
  est->add_flag("--bootstrap", bootstrap, "add pairs-cluster-bootstrap SE cross-checks");
  est->add_option("--bootstrap-reps", bootstrap_reps, "bootstrap draws");
  est->add_option("--seed", est_seed, "seed for bootstrap resampling")
      ->envname("DYNIV_SEED");

  // characterize ---------------------------------------------------------------
  auto* chr = app.add_subcommand("characterize", "latent-group means and IMCO "
                                                 "diagnostics (Table-3-style)");
  std::string chr_in, chr_outcome = "y", chr_covs, chr_cluster = "id", chr_waves,
              chr_format = "json";
  bool chr_bootstrap = false;
  int chr_boot_reps = 200;
  std::uint64_t chr_seed = dyniv::kDefaultSeed;
  chr->add_option("--input", chr_in, "long-format CSV")->required()
      ->envname("DYNIV_INPUT");
  chr->add_option("--covariates", chr_covs,
                  "comma-separated covariates (default: all)")
      ->envname("DYNIV_COVARIATES");
  chr->add_option("--outcome", chr_outcome, "outcome column name")
      ->envname("DYNIV_OUTCOME");
  chr->add_option("--cluster", chr_cluster, "cluster column")
      ->envname("DYNIV_CLUSTER");
  chr->add_option("--waves", chr_waves, "wave subset")->envname("DYNIV_WAVES");
  chr->add_option("--format", chr_format, "table format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->envname("DYNIV_FORMAT");
  chr->add_flag("--bootstrap", chr_bootstrap, "bootstrap SE cross-checks");
  chr->add_option("--bootstrap-reps", chr_boot_reps, "bootstrap draws");
  chr->add_option("--seed", chr_seed, "seed for bootstrap resampling")
      ->envname("DYNIV_SEED");

  // oracle ---------------------------------------------------------------------
  auto* orc = app.add_subcommand("oracle", "exact population estimands for a "
                                           "configuration");
  ConfigSource orc_src;
  orc_src.attach(orc);
  std::string orc_out;
  orc->add_option("--out", orc_out,
                  "output JSON path (default <output-dir>/oracle.json)")
      ->envname("DYNIV_OUT");

  // mc -------------------------------------------------------------------------
  auto* mc = app.add_subcommand("mc", "Monte Carlo study against the oracle");
  ConfigSource mc_src;
  mc_src.attach(mc);
  long mc_n = 0;
  int mc_reps = 0, mc_threads = 0;
  std::uint64_t mc_seed = dyniv::kDefaultSeed;
  std::string mc_controls, mc_estimators, mc_out;
  mc->add_option("--n", mc_n, "participants per replication")->required()
      ->envname("DYNIV_N");
  mc->add_option("--reps", mc_reps, "number of replications")->required()
      ->envname("DYNIV_REPS");
  mc->add_option("--seed", mc_seed, "master seed")->envname("DYNIV_SEED");
  mc->add_option("--controls", mc_controls, "controls for the fits")
      ->envname("DYNIV_CONTROLS");
  mc->add_option("--estimators", mc_estimators,
                 "subset: incremental,cumulative,any,wald1,hausman");
  mc->add_option("--threads", mc_threads, "worker threads (0 = hardware)");
  mc->add_option("--out", mc_out,
                 "output JSON path (default <output-dir>/mc_summary.json)")
      ->envname("DYNIV_OUT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      if (sim_out.empty()) sim_out = (fs::path(outdir) / "dataset.csv").string();
      return cmd_simulate(sim_src, sim_n, sim_seed, sim_out);
    }
    if (*est)
      return cmd_estimate(in_path, outdir, outcome, controls, cluster, waves,
                          format, bootstrap, bootstrap_reps, est_seed);
    if (*chr)
      return cmd_characterize(chr_in, outdir, chr_outcome, chr_covs, chr_cluster,
                              chr_waves, chr_format, chr_bootstrap, chr_boot_reps,
                              chr_seed);
    if (*orc) {
      if (orc_out.empty()) orc_out = (fs::path(outdir) / "oracle.json").string();
      return cmd_oracle(orc_src, orc_out);
    }
    if (*mc) {
      if (mc_out.empty()) mc_out = (fs::path(outdir) / "mc_summary.json").string();
      return cmd_mc(mc_src, mc_n, mc_reps, mc_seed, mc_controls, mc_estimators,
                    mc_threads, mc_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
