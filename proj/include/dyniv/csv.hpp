#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyniv/panel.hpp"

namespace dyniv {

// Column-name mapping for long-format ingestion. Canonical layout is
//   id,wave,z,t_exposure,y,<covariate...>
// with one row per (id, wave), empty string for missing y, and never-treated
// participants encoded as t_exposure = 0 at every wave. A revasc_wave column
// may be supplied instead of (or in addition to) t_exposure.
struct CsvSchema {
  std::string id = "id";
  std::string wave = "wave";
  std::string z = "z";
  std::string t_exposure = "t_exposure";
  std::string revasc_wave = "revasc_wave";
  std::string y = "y";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') { out.push_back(cur); cur.clear(); }
    else if (c != '\r') cur.push_back(c);
  }
  out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && p == e;
}

inline bool parse_int(const std::string& s, long long& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && p == e;
}

inline std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

struct RawRow {
  long long id = 0;
  int wave = 0;
  int z = 0;
  std::optional<int> t_exposure;
  std::optional<int> revasc_wave;  // kNever encoded separately
  bool revasc_never = false;
  std::optional<double> y;
  std::vector<std::string> cov_values;  // raw tokens, expanded later
  long line_no = 0;
};

}  // namespace detail

// Parse a long-format CSV stream into a validated PanelDataset.
//
// Per-wave exposure inputs are reconciled into a single revasc_wave per
// participant; any sequence inconsistent with the absorbing pattern is a hard
// error. Categorical covariate columns (any non-numeric cell) are expanded to
// 0/1 indicators "<name>=<level>" with lexicographic level order, dropping
// the first level as reference.
inline PanelDataset ingest_csv_stream(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty CSV: no header row");
  const auto header = detail::split_csv_line(line);

  int c_id = -1, c_wave = -1, c_z = -1, c_t = -1, c_r = -1, c_y = -1;
  std::vector<int> cov_cols;
  std::vector<std::string> cov_raw_names;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    const std::string& h = header[j];
    if (h == schema.id) c_id = j;
    else if (h == schema.wave) c_wave = j;
    else if (h == schema.z) c_z = j;
    else if (h == schema.t_exposure) c_t = j;
    else if (h == schema.revasc_wave) c_r = j;
    else if (h == schema.y) c_y = j;
    else if (!h.empty()) { cov_cols.push_back(j); cov_raw_names.push_back(h); }
  }
  require(c_id >= 0, "missing required column '" + schema.id + "'");
  require(c_wave >= 0, "missing required column '" + schema.wave + "'");
  require(c_z >= 0, "missing required column '" + schema.z + "'");
  require(c_t >= 0 || c_r >= 0,
          "need column '" + schema.t_exposure + "' or '" + schema.revasc_wave + "'");

  std::vector<detail::RawRow> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    auto where = [&] { return "row " + std::to_string(line_no) + ": "; };
    require(f.size() == header.size(), where() + "expected " +
            std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));

    detail::RawRow r;
    r.line_no = line_no;
    long long tmp;
    require(detail::parse_int(f[c_id], tmp), where() + "malformed id '" + f[c_id] + "'");
    r.id = tmp;
    require(detail::parse_int(f[c_wave], tmp) && tmp >= 1,
            where() + "malformed wave '" + f[c_wave] + "'");
    r.wave = static_cast<int>(tmp);
    require(detail::parse_int(f[c_z], tmp), where() + "malformed z '" + f[c_z] + "'");
    require(tmp == 0 || tmp == 1, where() + "assignment not binary: z = " + f[c_z]);
    r.z = static_cast<int>(tmp);
    if (c_t >= 0) {
      require(detail::parse_int(f[c_t], tmp) && tmp >= 0,
              where() + "malformed t_exposure '" + f[c_t] + "'");
      require(tmp <= r.wave, where() + "t_exposure exceeds wave index");
      r.t_exposure = static_cast<int>(tmp);
    }
    if (c_r >= 0) {
      const std::string& s = f[c_r];
      if (s.empty() || s == "never" || s == "NEVER") r.revasc_never = true;
      else {
        require(detail::parse_int(s, tmp) && tmp >= 1,
                where() + "malformed revasc_wave '" + s + "'");
        r.revasc_wave = static_cast<int>(tmp);
      }
    }
    if (c_y >= 0 && !f[c_y].empty()) {
      double v;
      require(detail::parse_double(f[c_y], v), where() + "malformed y '" + f[c_y] + "'");
      r.y = v;
    }
    for (int j : cov_cols) r.cov_values.push_back(f[j]);
    rows.push_back(std::move(r));
  }

  int w_bar = 0;
  for (const auto& r : rows) w_bar = std::max(w_bar, r.wave);
  require(w_bar >= 1, "CSV contains no data rows");

  // Decide numeric vs categorical per covariate column.
  const int n_cov = static_cast<int>(cov_cols.size());
  std::vector<bool> is_categorical(n_cov, false);
  for (int j = 0; j < n_cov; ++j)
    for (const auto& r : rows) {
      double v;
      if (!detail::parse_double(r.cov_values[j], v)) { is_categorical[j] = true; break; }
    }

  // Expanded covariate layout: numeric columns keep their name, categorical
  // columns become "<name>=<level>" indicators with the lexicographically
  // first level dropped as reference.
  PanelDataset d;
  d.w_bar = w_bar;
  std::vector<std::vector<std::string>> levels(n_cov);
  for (int j = 0; j < n_cov; ++j) {
    if (!is_categorical[j]) { d.covariate_names.push_back(cov_raw_names[j]); continue; }
    std::set<std::string> uniq;
    for (const auto& r : rows) uniq.insert(r.cov_values[j]);
    levels[j].assign(uniq.begin(), uniq.end());
    for (std::size_t k = 1; k < levels[j].size(); ++k)
      d.covariate_names.push_back(cov_raw_names[j] + "=" + levels[j][k]);
  }

  auto expand_covariates = [&](const detail::RawRow& r) {
    std::vector<double> out;
    for (int j = 0; j < n_cov; ++j) {
      if (!is_categorical[j]) {
        double v;
        require(detail::parse_double(r.cov_values[j], v),
                "row " + std::to_string(r.line_no) + ": malformed covariate '" +
                cov_raw_names[j] + "' value '" + r.cov_values[j] + "'");
        out.push_back(v);
      } else {
        for (std::size_t k = 1; k < levels[j].size(); ++k)
          out.push_back(r.cov_values[j] == levels[j][k] ? 1.0 : 0.0);
      }
    }
    return out;
  };

  // Group rows by id, preserving first-appearance order.
  std::vector<long long> order;
  std::unordered_map<long long, std::vector<const detail::RawRow*>> by_id;
  for (const auto& r : rows) {
    auto [it, fresh] = by_id.try_emplace(r.id);
    if (fresh) order.push_back(r.id);
    it->second.push_back(&r);
  }

  for (long long id : order) {
    const auto& rs = by_id[id];
    ParticipantRecord p;
    p.id = id;
    p.z = rs.front()->z;
    p.outcomes.assign(w_bar, std::nullopt);
    p.covariates = expand_covariates(*rs.front());

    // Reconcile exposure into a single first-treatment wave.
    int r_from_t = kNever;      // implied by any positive t_exposure
    int max_zero_wave = 0;      // latest wave with t_exposure == 0
    std::set<int> waves_seen;
    for (const auto* r : rs) {
      auto where = [&] { return "row " + std::to_string(r->line_no) + " (id " +
                                std::to_string(id) + "): "; };
      require(waves_seen.insert(r->wave).second, where() + "duplicate (id, wave)");
      require(r->z == p.z, where() + "inconsistent z across waves");
      require(expand_covariates(*r) == p.covariates,
              where() + "baseline covariate varies across waves");
      if (r->t_exposure) {
        int t = *r->t_exposure;
        if (t > 0) {
          int implied = r->wave - t + 1;
          if (r_from_t == kNever) r_from_t = implied;
          require(r_from_t == implied, where() + "non-absorbing exposure");
        } else {
          max_zero_wave = std::max(max_zero_wave, r->wave);
        }
      }
      if (r->revasc_wave || r->revasc_never) {
        int rv = r->revasc_never ? kNever : *r->revasc_wave;
        int first = rs.front()->revasc_never ? kNever : *rs.front()->revasc_wave;
        require(rv == first, where() + "inconsistent revasc_wave across waves");
      }
      if (r->y) p.outcomes[r->wave - 1] = r->y;
    }
    // A zero-exposure wave at or after the implied start wave contradicts
    // the absorbing pattern.
    if (r_from_t != kNever && max_zero_wave >= r_from_t)
      fail("id " + std::to_string(id) + ": non-absorbing exposure");

    int r_final = r_from_t;
    if (rs.front()->revasc_wave || rs.front()->revasc_never) {
      int declared = rs.front()->revasc_never ? kNever : *rs.front()->revasc_wave;
      if (r_from_t != kNever || max_zero_wave > 0) {
        // both sources present: every observed t must match the declared wave
        for (const auto* r : rs)
          if (r->t_exposure)
            require(*r->t_exposure == exposure_at(declared, r->wave),
                    "id " + std::to_string(id) +
                    ": t_exposure inconsistent with declared revasc_wave");
      }
      r_final = declared;
    }
    if (r_final != kNever)
      require(r_final >= 1 && r_final <= w_bar,
              "id " + std::to_string(id) + ": revasc_wave out of range");
    p.revasc_wave = r_final;
    d.participants.push_back(std::move(p));
  }

  auto violations = validate_panel(d);
  for (const auto& v : violations)
    fail("panel invalid after ingestion: id " + std::to_string(v.id) + ": " + v.rule);
  return d;
}

inline PanelDataset ingest_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  require(in.good(), "cannot open CSV file: " + path);
  return ingest_csv_stream(in, schema);
}

// Emit the canonical long format: one row per (id, wave) for every wave up to
// w_bar, empty y for attrited waves, t_exposure 0 at every wave for the
// never-treated. Doubles use shortest round-trip formatting, so
// ingest_csv(emit_csv(d)) == d on validated datasets.
inline void emit_csv_stream(const PanelDataset& d, std::ostream& out) {
  out << "id,wave,z,t_exposure,y";
  for (const auto& n : d.covariate_names) out << ',' << n;
  out << '\n';
  for (const auto& p : d.participants) {
    std::string covs;
    for (double v : p.covariates) { covs += ','; covs += detail::fmt_double(v); }
    for (int w = 1; w <= d.w_bar; ++w) {
      out << p.id << ',' << w << ',' << p.z << ',' << p.exposure(w) << ',';
      if (p.outcomes[w - 1]) out << detail::fmt_double(*p.outcomes[w - 1]);
      out << covs << '\n';
    }
  }
}

inline void emit_csv(const PanelDataset& d, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write CSV file: " + path);
  emit_csv_stream(d, out);
  require(out.good(), "write failed: " + path);
}

}  // namespace dyniv
