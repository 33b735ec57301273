#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "dyniv/regression.hpp"

using namespace dyniv;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// Random OLS design with known coefficients and optional noise.
DesignMatrices make_design(std::mt19937_64& rng, long n, int k, double noise_sd,
                           Eigen::VectorXd* b_out = nullptr, int cluster_size = 1) {
  std::normal_distribution<double> N(0, 1);
  DesignMatrices dm;
  dm.X.setOnes(n, k);
  for (long i = 0; i < n; ++i)
    for (int j = 1; j < k; ++j) dm.X(i, j) = N(rng);
  Eigen::VectorXd b(k);
  for (int j = 0; j < k; ++j) b[j] = N(rng);
  dm.y = dm.X * b;
  if (noise_sd > 0)
    for (long i = 0; i < n; ++i) dm.y[i] += noise_sd * N(rng);
  dm.Zmat = dm.X;
  for (int j = 0; j < k; ++j) {
    dm.x_names.push_back("x" + std::to_string(j));
    dm.z_names.push_back("x" + std::to_string(j));
  }
  for (long i = 0; i < n; ++i) dm.cluster.push_back(i / cluster_size + 1);
  if (b_out) *b_out = b;
  return dm;
}

}  // namespace

TEST_CASE("ols recovers exact coefficients with zero noise") {
  std::mt19937_64 rng(11);
  Eigen::VectorXd b0;
  auto dm = make_design(rng, 60, 4, 0.0, &b0);
  auto est = ols(dm);
  for (int j = 0; j < 4; ++j) {
    CHECK_THAT(est.coef[j], WithinAbs(b0[j], 1e-10));
    CHECK_THAT(est.vcov(j, j), WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("ols on a constant column returns the mean") {
  DesignMatrices dm;
  dm.y.resize(5);
  dm.y << 1, 2, 3, 4, 10;
  dm.X.setOnes(5, 1);
  dm.Zmat = dm.X;
  dm.x_names = {"const"};
  dm.z_names = {"const"};
  dm.cluster = {1, 2, 3, 4, 5};
  auto est = ols(dm);
  CHECK_THAT(est.coef[0], WithinAbs(4.0, 1e-12));
}

TEST_CASE("ols residuals are orthogonal to regressors") {
  std::mt19937_64 rng(12);
  auto dm = make_design(rng, 300, 5, 2.0);
  auto est = ols(dm);
  Eigen::VectorXd e = dm.y - dm.X * est.coef;
  Eigen::VectorXd g = dm.X.transpose() * e;
  for (int j = 0; j < 5; ++j)
    CHECK(std::abs(g[j]) / dm.X.col(j).norm() / e.norm() < 1e-8);
}

TEST_CASE("ols reports offending columns on rank deficiency") {
  std::mt19937_64 rng(13);
  auto dm = make_design(rng, 50, 3, 1.0);
  dm.X.conservativeResize(50, 4);
  dm.X.col(3) = dm.X.col(1) + dm.X.col(2);
  dm.Zmat = dm.X;
  dm.x_names.push_back("x_sum");
  dm.z_names.push_back("x_sum");
  CHECK_THROWS_WITH(ols(dm), ContainsSubstring("rank-deficient"));
}

TEST_CASE("iv equals ols when the endogenous column is its own instrument") {
  std::mt19937_64 rng(14);
  auto dm = make_design(rng, 200, 3, 1.5);
  dm.endogenous_cols = {2};  // but Zmat == X, so no actual endogeneity
  auto b_iv = iv_2sls(dm);
  auto b_ols = ols(dm);
  for (int j = 0; j < 3; ++j)
    CHECK_THAT(b_iv.coef[j], WithinAbs(b_ols.coef[j], 1e-10));
}

TEST_CASE("exactly identified iv reproduces the Wald ratio") {
  // Scalar endogenous T instrumented by binary Z, intercept included.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> N(0, 1);
  std::bernoulli_distribution Bz(0.5);
  const long n = 4000;
  DesignMatrices dm;
  dm.X.setOnes(n, 2);
  dm.Zmat.setOnes(n, 2);
  dm.y.resize(n);
  std::vector<double> sy(2, 0), st(2, 0);
  std::vector<long> cnt(2, 0);
  for (long i = 0; i < n; ++i) {
    const int z = Bz(rng) ? 1 : 0;
    const double u = N(rng);                      // confounder
    const double t = (z || u > 1.0) ? 1.0 : 0.0;  // selection on u
    const double y = 2.0 + 3.0 * t + u + 0.5 * N(rng);
    dm.X(i, 1) = t;
    dm.Zmat(i, 1) = z;
    dm.y[i] = y;
    dm.cluster.push_back(i + 1);
    sy[z] += y;
    st[z] += t;
    ++cnt[z];
  }
  dm.x_names = {"const", "t"};
  dm.z_names = {"const", "z"};
  dm.endogenous_cols = {1};
  auto est = iv_2sls(dm);
  const double wald = (sy[1] / cnt[1] - sy[0] / cnt[0]) /
                      (st[1] / cnt[1] - st[0] / cnt[0]);
  CHECK_THAT(est.coef[1], WithinAbs(wald, 1e-10));

  // Exactly identified: residuals orthogonal to every instrument column.
  Eigen::VectorXd e = dm.y - dm.X * est.coef;
  Eigen::VectorXd g = dm.Zmat.transpose() * e;
  for (int j = 0; j < 2; ++j)
    CHECK(std::abs(g[j]) / dm.Zmat.col(j).norm() / e.norm() < 1e-8);
}

TEST_CASE("iv rejects under-identified and collinear-instrument designs") {
  std::mt19937_64 rng(16);
  auto dm = make_design(rng, 100, 3, 1.0);
  SECTION("more endogenous than instruments") {
    dm.Zmat = dm.X.leftCols(2);
    dm.z_names = {"x0", "x1"};
    CHECK_THROWS_WITH(iv_2sls(dm), ContainsSubstring("under-identified"));
  }
  SECTION("endogenous column collinear after projection") {
    dm.X.col(2) = 2.0 * dm.X.col(1);  // projected X loses rank
    dm.endogenous_cols = {2};
    CHECK_THROWS_WITH(iv_2sls(dm), ContainsSubstring("weak or collinear"));
  }
}

TEST_CASE("cluster vcov collapses to heteroskedasticity-robust form") {
  std::mt19937_64 rng(17);
  auto dm = make_design(rng, 150, 3, 1.0);  // one observation per cluster
  auto est = ols(dm);
  // HC1 computed directly: N/(N-k) (X'X)^-1 (sum_i e_i^2 x_i x_i') (X'X)^-1
  Eigen::VectorXd e = dm.y - dm.X * est.coef;
  Eigen::MatrixXd xtx_inv = (dm.X.transpose() * dm.X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(3, 3);
  for (long i = 0; i < 150; ++i)
    meat += e[i] * e[i] * dm.X.row(i).transpose() * dm.X.row(i);
  Eigen::MatrixXd hc = xtx_inv * meat * xtx_inv;
  const double cr1 = (150.0 / 149.0) * (149.0 / 147.0);
  const double hc1 = 150.0 / 147.0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      CHECK_THAT(est.vcov(a, b), WithinAbs(hc(a, b) * cr1, 1e-12));
  CHECK_THAT(cr1, WithinAbs(hc1, 1e-12));  // size-1 clusters give the HC1 factor
}

TEST_CASE("duplicating rows leaves coefficients fixed, rescales vcov by the CR1 factor") {
  std::mt19937_64 rng(18);
  auto dm = make_design(rng, 80, 3, 1.0, nullptr, 4);  // 20 clusters of 4
  auto est1 = ols(dm);

  DesignMatrices dup;
  const long n = dm.rows();
  dup.y.resize(2 * n);
  dup.X.resize(2 * n, 3);
  dup.Zmat.resize(2 * n, 3);
  dup.y << dm.y, dm.y;
  dup.X << dm.X, dm.X;
  dup.Zmat << dm.Zmat, dm.Zmat;
  dup.x_names = dm.x_names;
  dup.z_names = dm.z_names;
  dup.cluster = dm.cluster;
  dup.cluster.insert(dup.cluster.end(), dm.cluster.begin(), dm.cluster.end());
  auto est2 = ols(dup);

  for (int j = 0; j < 3; ++j) CHECK_THAT(est2.coef[j], WithinAbs(est1.coef[j], 1e-10));
  const double c1 = (20.0 / 19.0) * (79.0 / 77.0);
  const double c2 = (20.0 / 19.0) * (159.0 / 157.0);
  // Doubling every row doubles each cluster score: meat x4, bread x1/2 each
  // side, so the sandwich core is unchanged and only the factor moves.
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      CHECK_THAT(est2.vcov(a, b), WithinAbs(est1.vcov(a, b) * c2 / c1, 1e-10));
}

TEST_CASE("cluster_vcov matches the estimator-internal covariance") {
  std::mt19937_64 rng(19);
  auto dm = make_design(rng, 120, 4, 1.0, nullptr, 3);
  auto est = ols(dm);
  auto v = cluster_vcov(dm, est.coef, FitKind::ols);
  CHECK((v - est.vcov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_WITH(
      [&] {
        auto one = dm;
        std::fill(one.cluster.begin(), one.cluster.end(), 7);
        return cluster_vcov(one, est.coef, FitKind::ols);
      }(),
      ContainsSubstring("fewer than 2 clusters"));
}

TEST_CASE("vcov is invariant to row order and cluster relabeling") {
  std::mt19937_64 rng(20);
  auto dm = make_design(rng, 90, 3, 1.5, nullptr, 3);
  auto est = ols(dm);

  // Permute rows.
  std::vector<long> perm(90);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  DesignMatrices pm = dm;
  for (long i = 0; i < 90; ++i) {
    pm.y[i] = dm.y[perm[i]];
    pm.X.row(i) = dm.X.row(perm[i]);
    pm.Zmat.row(i) = dm.Zmat.row(perm[i]);
    pm.cluster[i] = dm.cluster[perm[i]];
  }
  auto est_perm = ols(pm);
  CHECK((est_perm.vcov - est.vcov).cwiseAbs().maxCoeff() < 1e-10);

  // Relabel clusters bijectively.
  DesignMatrices rm = dm;
  for (auto& c : rm.cluster) c = 10'000 - 13 * c;
  auto est_rel = ols(rm);
  CHECK((est_rel.vcov - est.vcov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affine outcome equivariance") {
  std::mt19937_64 rng(21);
  auto dm = make_design(rng, 100, 3, 1.0, nullptr, 2);
  auto base = ols(dm);
  const double a = -2.5, c = 7.0;
  DesignMatrices t = dm;
  t.y = a * dm.y + Eigen::VectorXd::Constant(100, c);
  auto scaled = ols(t);
  CHECK_THAT(scaled.coef[0], WithinAbs(a * base.coef[0] + c, 1e-9));  // intercept
  for (int j = 1; j < 3; ++j)
    CHECK_THAT(scaled.coef[j], WithinAbs(a * base.coef[j], 1e-9));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK_THAT(scaled.vcov(i, j), WithinAbs(a * a * base.vcov(i, j), 1e-8));
}

TEST_CASE("wald test basics") {
  std::mt19937_64 rng(22);
  auto dm = make_design(rng, 200, 3, 1.0, nullptr, 2);
  auto est = ols(dm);

  SECTION("satisfied restriction gives statistic 0") {
    Eigen::MatrixXd R(1, 3);
    R << 0, 1, 0;
    Eigen::VectorXd q(1);
    q << est.coef[1];
    auto t = wald_test(est, R, q);
    CHECK_THAT(t.statistic, WithinAbs(0.0, 1e-12));
    CHECK_THAT(t.p_value, WithinAbs(1.0, 1e-12));
    CHECK(t.dof == 1);
  }
  SECTION("scalar restriction equals squared z-ratio") {
    Eigen::MatrixXd R(1, 3);
    R << 0, 0, 1;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
    auto t = wald_test(est, R, q);
    const double z = est.coef[2] / est.se(2);
    CHECK_THAT(t.statistic, WithinAbs(z * z, 1e-10));
  }
  SECTION("coefficients restricted to a common value") {
    // Force two coefficients equal in the DGP, test equality.
    Eigen::MatrixXd R(1, 3);
    R << 0, 1, -1;
    Eigen::VectorXd q(1);
    q << est.coef[1] - est.coef[2];
    auto t = wald_test(est, R, q);
    CHECK_THAT(t.statistic, WithinAbs(0.0, 1e-12));
  }
  SECTION("rank-deficient restriction matrix is rejected") {
    Eigen::MatrixXd R(2, 3);
    R << 0, 1, 0, 0, 1, 0;
    CHECK_THROWS_WITH(wald_test(est, R, Eigen::VectorXd::Zero(2)),
                      ContainsSubstring("full row rank"));
  }
}

TEST_CASE("wald test uses pseudo-inverse rank when the restriction variance is singular") {
  EstimateTable est;
  est.names = {"a", "b"};
  est.coef = Eigen::Vector2d(1.0, 2.0);
  est.vcov.setZero(2, 2);
  est.vcov(0, 0) = 1.0;  // coefficient b has zero variance
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd q = Eigen::Vector2d(0.0, 2.0);
  auto t = wald_test(est, R, q);
  CHECK(t.dof == 1);  // detected rank, not nominal rows
  CHECK_THAT(t.statistic, WithinAbs(1.0, 1e-12));
}

TEST_CASE("hansen J requires over-identification") {
  std::mt19937_64 rng(23);
  auto dm = make_design(rng, 100, 3, 1.0);
  dm.endogenous_cols = {2};
  auto est = iv_2sls(dm);
  CHECK_THROWS_WITH(hansen_j(dm, est), ContainsSubstring("not over-identified"));
}

TEST_CASE("hansen J accepts a correctly specified over-identified model") {
  // Two valid instruments for one endogenous column; J should be small on
  // average. One fixed seed, null true.
  std::mt19937_64 rng(24);
  std::normal_distribution<double> N(0, 1);
  const long n = 6000;
  DesignMatrices dm;
  dm.X.setOnes(n, 2);
  dm.Zmat.setOnes(n, 3);
  dm.y.resize(n);
  for (long i = 0; i < n; ++i) {
    const double z1 = N(rng), z2 = N(rng), u = N(rng);
    const double t = 0.8 * z1 + 0.5 * z2 + u;
    dm.X(i, 1) = t;
    dm.Zmat(i, 1) = z1;
    dm.Zmat(i, 2) = z2;
    dm.y[i] = 1.0 + 2.0 * t + u + 0.3 * N(rng);  // u makes t endogenous
    dm.cluster.push_back(i + 1);
  }
  dm.x_names = {"const", "t"};
  dm.z_names = {"const", "z1", "z2"};
  dm.endogenous_cols = {1};
  auto est = iv_2sls(dm);
  auto j = hansen_j(dm, est);
  CHECK(j.dof == 1);
  CHECK(j.p_value > 0.001);  // would reject only under gross misspecification
  CHECK_THAT(est.coef[1], WithinAbs(2.0, 0.1));
}

TEST_CASE("joint difference test on identical fits is exactly zero") {
  std::mt19937_64 rng(25);
  auto dm = make_design(rng, 100, 3, 1.0, nullptr, 2);
  auto est = ols(dm);
  auto d = joint_difference_test(est, est);
  CHECK(d.diff.cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.joint.statistic == 0.0);
  CHECK_THAT(d.joint.p_value, WithinAbs(1.0, 1e-12));
}

TEST_CASE("joint difference test rejects mismatched inputs") {
  std::mt19937_64 rng(26);
  auto dm = make_design(rng, 100, 3, 1.0, nullptr, 2);
  auto est = ols(dm);
  SECTION("no shared names") {
    auto other = est;
    other.names = {"p", "q", "r"};
    CHECK_THROWS_WITH(joint_difference_test(est, other),
                      ContainsSubstring("misaligned coefficient names"));
  }
  SECTION("different clusters") {
    auto dm2 = dm;
    for (auto& c : dm2.cluster) c += 1000;
    auto est2 = ols(dm2);
    CHECK_THROWS_WITH(joint_difference_test(est, est2),
                      ContainsSubstring("same clusters"));
  }
}

TEST_CASE("joint difference covariance matches the analytic one-estimator case") {
  // Compare an estimate against a shifted copy: differences are constant, the
  // joint covariance must be ~0 against itself but the per-coefficient SEs of
  // (a - b) with b = a + const are 0, so use two genuinely different fits.
  std::mt19937_64 rng(27);
  auto dm = make_design(rng, 400, 3, 2.0, nullptr, 4);
  auto full = ols(dm);
  // Second estimator: OLS on a subset of columns (different model, same rows).
  DesignMatrices sub = dm;
  sub.X = dm.X.leftCols(2);
  sub.Zmat = sub.X;
  sub.x_names = {"x0", "x1"};
  sub.z_names = sub.x_names;
  auto small = ols(sub);
  auto d = joint_difference_test(full, small, {"x1"});
  // SE of difference must respect the triangle bound implied by the joint
  // covariance: |se_a - se_b| <= se_diff <= se_a + se_b.
  const double sa = full.se(1), sb = small.se(1);
  CHECK(d.se[0] <= sa + sb + 1e-12);
  CHECK(d.se[0] >= std::abs(sa - sb) - 1e-3);
  CHECK(d.joint.dof == 1);
}
