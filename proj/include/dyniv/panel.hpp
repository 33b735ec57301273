#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyniv/common.hpp"

namespace dyniv {

// One trial participant. Assignment and first-exposure wave are fixed at
// ingestion; per-wave exposure is derived, never stored. Baseline covariates
// are stored once per participant, aligned with PanelDataset::covariate_names.
struct ParticipantRecord {
  long long id = 0;
  int z = 0;                    // assignment arm, 0/1
  int revasc_wave = kNever;     // first treated wave, kNever if untreated
  std::vector<std::optional<double>> outcomes;  // index w-1; nullopt = attrited
  std::vector<double> covariates;

  int exposure(int w) const { return exposure_at(revasc_wave, w); }
  bool any_exposure(int w) const { return exposure(w) > 0; }

  bool operator==(const ParticipantRecord&) const = default;
};

struct PanelViolation {
  long long id = 0;
  int wave = 0;  // 0 when the rule is not wave-specific
  std::string rule;
};

// Validated panel. Immutable after construction/validation; estimators only
// read it, so sharing across parallel workers is safe.
struct PanelDataset {
  std::vector<ParticipantRecord> participants;
  int w_bar = 0;
  std::vector<std::string> covariate_names;
  // Cluster assignment for robust covariances: participant id by default, or
  // the (integer-valued) covariate at this index.
  int cluster_covariate = -1;

  bool operator==(const PanelDataset&) const = default;

  long long cluster_key(const ParticipantRecord& p) const {
    if (cluster_covariate < 0) return p.id;
    return std::llround(p.covariates[cluster_covariate]);
  }

  int covariate_index(const std::string& name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      if (covariate_names[j] == name) return static_cast<int>(j);
    fail("unknown covariate '" + name + "'");
  }

  const ParticipantRecord& find(long long id) const {
    for (const auto& p : participants)
      if (p.id == id) return p;
    fail("unknown participant id " + std::to_string(id));
  }
};

// Diagnostic check of every dataset invariant. Returns one entry per broken
// rule; empty means the panel is valid.
inline std::vector<PanelViolation> validate_panel(const PanelDataset& d) {
  std::vector<PanelViolation> out;
  if (d.w_bar < 1) out.push_back({0, 0, "w_bar must be >= 1"});

  std::unordered_map<long long, int> seen;
  long n_z0 = 0, n_z1 = 0;
  for (const auto& p : d.participants) {
    if (++seen[p.id] == 2) out.push_back({p.id, 0, "duplicate participant id"});
    if (p.z != 0 && p.z != 1) out.push_back({p.id, 0, "assignment not binary"});
    if (p.z == 0) ++n_z0; else ++n_z1;
    if (p.revasc_wave != kNever && (p.revasc_wave < 1 || p.revasc_wave > d.w_bar))
      out.push_back({p.id, p.revasc_wave, "revasc_wave out of range"});
    if (static_cast<int>(p.outcomes.size()) != d.w_bar)
      out.push_back({p.id, 0, "outcome vector length != w_bar"});
    if (p.covariates.size() != d.covariate_names.size())
      out.push_back({p.id, 0, "covariate vector length mismatch"});
  }
  if (!d.participants.empty() && (n_z0 == 0 || n_z1 == 0))
    out.push_back({0, 0, "empty assignment arm"});
  return out;
}

// Exposure lookup by participant id. Wave must lie in {1,..,w_bar}.
inline int exposure(const PanelDataset& d, long long id, int w) {
  require(w >= 1 && w <= d.w_bar, "wave out of range: " + std::to_string(w));
  return d.find(id).exposure(w);
}

// Restrict outcomes to a subset of waves (others become missing) and shrink
// w_bar to the largest selected wave. Used by the CLI `--waves` filter.
inline PanelDataset restrict_waves(const PanelDataset& d, const std::vector<int>& waves) {
  require(!waves.empty(), "empty wave selection");
  int new_wbar = 0;
  for (int w : waves) {
    require(w >= 1 && w <= d.w_bar, "selected wave out of range: " + std::to_string(w));
    new_wbar = std::max(new_wbar, w);
  }
  PanelDataset out;
  out.w_bar = new_wbar;
  out.covariate_names = d.covariate_names;
  out.participants.reserve(d.participants.size());
  for (const auto& p : d.participants) {
    ParticipantRecord q = p;
    q.outcomes.assign(new_wbar, std::nullopt);
    for (int w : waves)
      if (p.outcomes[w - 1]) q.outcomes[w - 1] = p.outcomes[w - 1];
    if (q.revasc_wave != kNever && q.revasc_wave > new_wbar) q.revasc_wave = kNever;
    out.participants.push_back(std::move(q));
  }
  return out;
}

}  // namespace dyniv
