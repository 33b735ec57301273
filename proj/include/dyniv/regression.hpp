#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dyniv/common.hpp"

namespace dyniv {

// ---------------------------------------------------------------------------
// Design matrices and result containers
// ---------------------------------------------------------------------------

// Stacked estimation input. Exogenous columns of X must appear verbatim in
// Zmat; endogenous_cols indexes the instrumented columns of X.
struct DesignMatrices {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Zmat;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  std::vector<long long> cluster;   // cluster key per row (participant id)
  std::vector<int> endogenous_cols;

  long rows() const { return y.size(); }

  void check_conformable() const {
    require(X.rows() == y.size() && Zmat.rows() == y.size() &&
                static_cast<long>(cluster.size()) == y.size(),
            "design matrices must have equal row counts");
    require(static_cast<long>(x_names.size()) == X.cols() &&
                static_cast<long>(z_names.size()) == Zmat.cols(),
            "column name lists must match matrix widths");
  }
};

struct EstimateMeta {
  std::string kind;         // estimand description, e.g. "incremental_lambda"
  std::string instruments;  // instrument set description, empty for OLS
  int wave_lo = 0, wave_hi = 0;
  std::vector<std::string> notes;
};

// Named coefficients with cluster-robust covariance. Per-cluster influence
// contributions are kept so that two estimates fit on the same sample can be
// compared with an exact joint covariance.
struct EstimateTable {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  long n_obs = 0;
  long n_clusters = 0;
  EstimateMeta meta;

  std::vector<long long> cluster_ids;  // sorted; rows of `influence`
  Eigen::MatrixXd influence;           // G x k, unscaled: sum_g phi phi' ~ vcov

  double se(int i) const { return std::sqrt(std::max(0.0, vcov(i, i))); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    fail("no coefficient named '" + name + "'");
  }
  double operator[](const std::string& name) const { return coef[index_of(name)]; }
};

enum class TestKind { wald, hansen_j, hausman };

struct TestResult {
  double statistic = 0;
  int dof = 0;
  double p_value = 1;
  TestKind kind = TestKind::wald;
};

inline double chi2_sf(double x, int dof) {
  if (x <= 0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::cdf(boost::math::complement(dist, x));
}

// ---------------------------------------------------------------------------
// Pivoted-QR helpers with rank detection
// ---------------------------------------------------------------------------

namespace detail {

struct RankQr {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  int rank = 0;
  double tol = 0;

  explicit RankQr(const Eigen::MatrixXd& A) : qr(A) {
    const auto& R = qr.matrixR();
    const int k = static_cast<int>(std::min(A.rows(), A.cols()));
    const double max_diag = k > 0 ? std::abs(R(0, 0)) : 0.0;
    tol = max_diag * std::numeric_limits<double>::epsilon() *
          static_cast<double>(std::max(A.rows(), A.cols()));
    for (int i = 0; i < k; ++i)
      if (std::abs(R(i, i)) > tol) ++rank;
  }

  bool full_column_rank() const { return rank == qr.cols(); }

  // Names of the columns pivoted past the detected rank.
  std::vector<std::string> deficient_columns(const std::vector<std::string>& names) const {
    std::vector<std::string> out;
    const auto& perm = qr.colsPermutation().indices();
    for (int i = rank; i < qr.cols(); ++i) out.push_back(names[perm[i]]);
    return out;
  }

  // (A'A)^{-1} for full-column-rank A, from the triangular factor.
  Eigen::MatrixXd normal_inverse() const {
    const int k = static_cast<int>(qr.cols());
    Eigen::MatrixXd R1 = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
    Eigen::MatrixXd Rinv = R1.triangularView<Eigen::Upper>().solve(
        Eigen::MatrixXd::Identity(k, k));
    Eigen::MatrixXd M = Rinv * Rinv.transpose();
    const auto& P = qr.colsPermutation();
    return P * M * P.transpose();
  }
};

inline std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

// Cluster index: sorted unique ids plus per-row group index. Sorting makes
// every cluster-level aggregate invariant to row order and id relabeling.
struct ClusterIndex {
  std::vector<long long> ids;
  std::vector<int> group;  // per row

  explicit ClusterIndex(const std::vector<long long>& cluster) {
    ids = cluster;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    group.resize(cluster.size());
    for (std::size_t i = 0; i < cluster.size(); ++i) {
      auto it = std::lower_bound(ids.begin(), ids.end(), cluster[i]);
      group[i] = static_cast<int>(it - ids.begin());
    }
  }
  int size() const { return static_cast<int>(ids.size()); }
};

// Per-cluster sums of score rows: s_g = sum_{i in g} rows_i.
inline Eigen::MatrixXd cluster_sums(const Eigen::MatrixXd& rows, const ClusterIndex& ci) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ci.size(), rows.cols());
  for (long i = 0; i < rows.rows(); ++i) S.row(ci.group[i]) += rows.row(i);
  return S;
}

inline double cr1_factor(long n, long g, long k) {
  return (static_cast<double>(g) / (g - 1)) *
         (static_cast<double>(n - 1) / (n - k));
}

// Symmetric pseudo-inverse with eigenvalue thresholding; returns detected rank.
inline Eigen::MatrixXd pinv_sym(const Eigen::MatrixXd& M, int& rank_out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const auto& vals = es.eigenvalues();
  const double tol = vals.cwiseAbs().maxCoeff() *
                     std::numeric_limits<double>::epsilon() * M.rows() * 8;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(vals.size());
  rank_out = 0;
  for (int i = 0; i < vals.size(); ++i)
    if (vals[i] > tol) { inv[i] = 1.0 / vals[i]; ++rank_out; }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cluster-robust covariance (CR1 sandwich)
// ---------------------------------------------------------------------------

enum class FitKind { ols, iv };

namespace detail {

struct FitInternals {
  Eigen::MatrixXd bread;        // maps summed scores to coefficient space
  Eigen::MatrixXd score_rows;   // per-row moment contributions (N x k)
};

// vcov and influence from per-row scores: phi_g = bread * s_g.
inline void attach_vcov(EstimateTable& est, const FitInternals& fi,
                        const ClusterIndex& ci, long k_design) {
  require(ci.size() >= 2, "fewer than 2 clusters");
  Eigen::MatrixXd S = cluster_sums(fi.score_rows, ci);         // G x k
  Eigen::MatrixXd phi = S * fi.bread.transpose();              // G x k_coef
  const double c = cr1_factor(est.n_obs, ci.size(), k_design);
  est.vcov = c * (phi.transpose() * phi);
  est.n_clusters = ci.size();
  est.cluster_ids = ci.ids;
  est.influence = std::move(phi);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OLS
// ---------------------------------------------------------------------------

inline EstimateTable ols(const DesignMatrices& dm) {
  dm.check_conformable();
  const long n = dm.rows();
  const long k = dm.X.cols();
  require(n > k, "more coefficients than observations");

  detail::RankQr qr(dm.X);
  if (!qr.full_column_rank())
    fail("rank-deficient regressor matrix; offending columns: " +
         detail::join(qr.deficient_columns(dm.x_names), ", "));

  EstimateTable est;
  est.names = dm.x_names;
  est.coef = qr.qr.solve(dm.y);
  est.n_obs = n;

  Eigen::VectorXd e = dm.y - dm.X * est.coef;
  detail::FitInternals fi;
  fi.bread = qr.normal_inverse();
  fi.score_rows = dm.X.array().colwise() * e.array();
  detail::ClusterIndex ci(dm.cluster);
  detail::attach_vcov(est, fi, ci, k);
  return est;
}

// ---------------------------------------------------------------------------
// Two-stage least squares
// ---------------------------------------------------------------------------

// Exactly identified designs solve (Z'X) b = Z'y; over-identified designs use
// the two-stage projection estimator. Either way the computation runs through
// QR of the instrument matrix for numerical stability.
inline EstimateTable iv_2sls(const DesignMatrices& dm) {
  dm.check_conformable();
  const long n = dm.rows();
  const long kx = dm.X.cols();
  const long kz = dm.Zmat.cols();
  require(kz >= kx, "under-identified: more endogenous regressors than instruments");
  require(n > kx, "more coefficients than observations");

  detail::RankQr qrz(dm.Zmat);
  if (!qrz.full_column_rank())
    fail("rank-deficient instrument matrix; offending columns: " +
         detail::join(qrz.deficient_columns(dm.z_names), ", "));

  // Project X and y onto the instrument column space: Xp = Q'X, yp = Q'y.
  Eigen::MatrixXd Xp =
      (qrz.qr.householderQ().transpose() * dm.X).topRows(kz);
  Eigen::VectorXd yp =
      (qrz.qr.householderQ().transpose() * dm.y).topRows(kz);

  detail::RankQr qrx(Xp);
  if (!qrx.full_column_rank())
    fail("weak or collinear instruments: Z'X rank-deficient; offending columns: " +
         detail::join(qrx.deficient_columns(dm.x_names), ", "));

  EstimateTable est;
  est.names = dm.x_names;
  est.coef = qrx.qr.solve(yp);
  est.n_obs = n;

  Eigen::VectorXd e = dm.y - dm.X * est.coef;   // structural residuals
  Eigen::MatrixXd G = qrz.qr.solve(dm.X);       // first-stage map (Z'Z)^-1 Z'X

  detail::FitInternals fi;
  fi.bread = qrx.normal_inverse() * G.transpose();  // (X'PzX)^{-1} G'
  fi.score_rows = dm.Zmat.array().colwise() * e.array();
  detail::ClusterIndex ci(dm.cluster);
  detail::attach_vcov(est, fi, ci, kx);
  return est;
}

// Standalone CR1 sandwich for a coefficient vector produced by the matching
// estimator. A = X'X for OLS, Z'X for (exactly identified) IV.
inline Eigen::MatrixXd cluster_vcov(const DesignMatrices& dm,
                                    const Eigen::VectorXd& coef, FitKind kind) {
  dm.check_conformable();
  require(coef.size() == dm.X.cols(), "coefficient length mismatch");
  detail::ClusterIndex ci(dm.cluster);
  require(ci.size() >= 2, "fewer than 2 clusters");

  Eigen::VectorXd e = dm.y - dm.X * coef;
  Eigen::MatrixXd score_rows;
  Eigen::MatrixXd bread;
  if (kind == FitKind::ols) {
    detail::RankQr qr(dm.X);
    require(qr.full_column_rank(), "rank-deficient regressor matrix");
    bread = qr.normal_inverse();
    score_rows = dm.X.array().colwise() * e.array();
  } else {
    detail::RankQr qrz(dm.Zmat);
    require(qrz.full_column_rank(), "rank-deficient instrument matrix");
    Eigen::MatrixXd Xp =
        (qrz.qr.householderQ().transpose() * dm.X).topRows(dm.Zmat.cols());
    detail::RankQr qrx(Xp);
    require(qrx.full_column_rank(), "weak or collinear instruments");
    Eigen::MatrixXd G = qrz.qr.solve(dm.X);
    bread = qrx.normal_inverse() * G.transpose();
    score_rows = dm.Zmat.array().colwise() * e.array();
  }
  Eigen::MatrixXd S = detail::cluster_sums(score_rows, ci);
  Eigen::MatrixXd phi = S * bread.transpose();
  return detail::cr1_factor(dm.rows(), ci.size(), dm.X.cols()) *
         (phi.transpose() * phi);
}

// ---------------------------------------------------------------------------
// Wald test
// ---------------------------------------------------------------------------

// statistic = (R b - q)' (R V R')^+ (R b - q), chi-squared with dof equal to
// the detected rank of R V R'. Pseudo-inversion keeps borderline-collinear
// exposure designs testable instead of failing outright.
inline TestResult wald_test(const EstimateTable& est, const Eigen::MatrixXd& R,
                            const Eigen::VectorXd& q) {
  require(R.cols() == est.coef.size(), "restriction matrix width mismatch");
  require(R.rows() == q.size(), "restriction vector length mismatch");
  {
    detail::RankQr qr(Eigen::MatrixXd(R.transpose()));
    require(qr.rank == R.rows(), "restriction matrix not of full row rank");
  }
  Eigen::VectorXd v = R * est.coef - q;
  Eigen::MatrixXd M = R * est.vcov * R.transpose();
  int rank = 0;
  Eigen::MatrixXd Minv = detail::pinv_sym(M, rank);
  require(rank >= 1, "restriction variance has rank 0");
  TestResult t;
  t.kind = TestKind::wald;
  t.statistic = std::max(0.0, v.dot(Minv * v));
  t.dof = rank;
  t.p_value = chi2_sf(t.statistic, t.dof);
  return t;
}

// Convenience: joint test that a named subset of coefficients are all equal.
inline TestResult equality_test(const EstimateTable& est,
                                const std::vector<std::string>& names) {
  require(names.size() >= 2, "equality test needs at least 2 coefficients");
  const int m = static_cast<int>(names.size());
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m - 1, est.coef.size());
  for (int i = 0; i + 1 < m; ++i) {
    R(i, est.index_of(names[i])) = 1;
    R(i, est.index_of(names[i + 1])) = -1;
  }
  return wald_test(est, R, Eigen::VectorXd::Zero(m - 1));
}

// ---------------------------------------------------------------------------
// Hansen J over-identification test
// ---------------------------------------------------------------------------

// Two-step: S is built from first-step 2SLS residuals, the efficient GMM
// coefficient re-solves the weighted moments, and J evaluates at that point.
inline TestResult hansen_j(const DesignMatrices& dm, const EstimateTable& first_step) {
  dm.check_conformable();
  const long kx = dm.X.cols();
  const long kz = dm.Zmat.cols();
  require(kz > kx, "not over-identified");
  const double n = static_cast<double>(dm.rows());

  Eigen::VectorXd e1 = dm.y - dm.X * first_step.coef;
  detail::ClusterIndex ci(dm.cluster);
  Eigen::MatrixXd score_rows = dm.Zmat.array().colwise() * e1.array();
  Eigen::MatrixXd Sg = detail::cluster_sums(score_rows, ci);
  Eigen::MatrixXd S = (Sg.transpose() * Sg) / n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const double emin = es.eigenvalues().minCoeff();
  const double emax = es.eigenvalues().maxCoeff();
  if (emin <= 0 || emax / emin > 1e12)
    fail("moment covariance S is singular (condition number " +
         std::to_string(emin > 0 ? emax / emin : std::numeric_limits<double>::infinity()) + ")");
  Eigen::MatrixXd Sinv = es.eigenvectors() *
                         es.eigenvalues().cwiseInverse().asDiagonal() *
                         es.eigenvectors().transpose();

  // Efficient two-step coefficient.
  Eigen::MatrixXd ZX = dm.Zmat.transpose() * dm.X;
  Eigen::VectorXd Zy = dm.Zmat.transpose() * dm.y;
  Eigen::MatrixXd A = ZX.transpose() * Sinv * ZX;
  Eigen::VectorXd b = ZX.transpose() * Sinv * Zy;
  Eigen::VectorXd coef2 = A.ldlt().solve(b);

  Eigen::VectorXd gbar = (dm.Zmat.transpose() * (dm.y - dm.X * coef2)) / n;
  TestResult t;
  t.kind = TestKind::hansen_j;
  t.statistic = std::max(0.0, n * gbar.dot(Sinv * gbar));
  t.dof = static_cast<int>(kz - kx);
  t.p_value = chi2_sf(t.statistic, t.dof);
  return t;
}

// ---------------------------------------------------------------------------
// Joint difference test (Hausman-style, unrestricted correlation)
// ---------------------------------------------------------------------------

struct DifferenceResult {
  std::vector<std::string> names;
  Eigen::VectorXd diff;     // coef_a - coef_b
  Eigen::VectorXd se;       // SE of each difference
  Eigen::VectorXd t_stat;
  TestResult joint;         // chi-squared on the difference vector
};

// Compares two estimates fit on the same sample by stacking their per-cluster
// influence contributions, which allows unrestricted correlation between the
// estimators. `names` selects the coefficient subset; defaults to all names
// the two fits share, in estimate-A order.
inline DifferenceResult joint_difference_test(const EstimateTable& a,
                                              const EstimateTable& b,
                                              std::vector<std::string> names = {}) {
  require(a.influence.rows() == static_cast<long>(a.cluster_ids.size()) &&
              b.influence.rows() == static_cast<long>(b.cluster_ids.size()),
          "estimates lack per-cluster influence functions");
  require(a.cluster_ids == b.cluster_ids,
          "estimates were not fit on the same clusters");

  if (names.empty()) {
    for (const auto& n : a.names)
      if (std::find(b.names.begin(), b.names.end(), n) != b.names.end())
        names.push_back(n);
  }
  require(!names.empty(), "misaligned coefficient names: no common subset");

  const int m = static_cast<int>(names.size());
  const int g = static_cast<int>(a.cluster_ids.size());
  require(g >= 2, "fewer than 2 clusters");

  DifferenceResult r;
  r.names = names;
  r.diff.resize(m);
  Eigen::MatrixXd psi(g, m);  // per-cluster influence of the difference
  for (int j = 0; j < m; ++j) {
    const int ia = a.index_of(names[j]);
    const int ib = b.index_of(names[j]);
    r.diff[j] = a.coef[ia] - b.coef[ib];
    psi.col(j) = a.influence.col(ia) - b.influence.col(ib);
  }
  const double c = static_cast<double>(g) / (g - 1);
  Eigen::MatrixXd V = c * (psi.transpose() * psi);

  r.se.resize(m);
  r.t_stat.resize(m);
  for (int j = 0; j < m; ++j) {
    r.se[j] = std::sqrt(std::max(0.0, V(j, j)));
    r.t_stat[j] = r.se[j] > 0 ? r.diff[j] / r.se[j] : 0.0;
  }
  r.joint.kind = TestKind::hausman;
  // Degenerate case: the difference variance is zero to machine precision
  // (identical fits, or noise-free data where both estimators interpolate).
  // Inverting rounding-level eigenvalues would turn rounding-level
  // differences into arbitrary statistics, so report an exact null instead.
  const double scale = std::max({1.0, a.coef.norm(), b.coef.norm()});
  if (std::sqrt(V.cwiseAbs().maxCoeff()) <= 1e-10 * scale &&
      r.diff.cwiseAbs().maxCoeff() <= 1e-8 * scale) {
    r.joint.statistic = 0;
    r.joint.dof = m;
    r.joint.p_value = 1;
    return r;
  }
  int rank = 0;
  Eigen::MatrixXd Vinv = detail::pinv_sym(V, rank);
  require(rank >= 1, "difference variance has rank 0");
  r.joint.statistic = std::max(0.0, r.diff.dot(Vinv * r.diff));
  r.joint.dof = rank;
  r.joint.p_value = chi2_sf(r.joint.statistic, r.joint.dof);
  return r;
}

}  // namespace dyniv
