#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fvtest/funclasses.hpp"
#include "oracles.hpp"

using namespace fvtest;

namespace {

ScoreSet random_scores(std::size_t n, std::mt19937_64& eng, bool ties = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> z;
  ScoreSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.v.push_back(ties ? std::round(u(eng) * 4.0) / 4.0 : u(eng));
    s.phi.push_back(z(eng) + 0.5 * s.v.back());
  }
  return s;
}

std::vector<std::vector<double>> to_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
  return out;
}

RkhsWorkspace diagonal_workspace(const Eigen::VectorXd& gamma_diag, const Eigen::VectorXd& v_diag,
                                 const Eigen::VectorXd& root_n_u, std::size_t n) {
  RkhsWorkspace ws;
  ws.phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), gamma_diag.size());
  ws.gamma_diag = gamma_diag;
  ws.vmat = v_diag.asDiagonal();
  ws.u = root_n_u / std::sqrt(static_cast<double>(n));
  return ws;
}

}  // namespace

TEST(RkhsBasis, KnownValues) {
  const auto b0 = rkhs_basis(0.0, 4);
  const double r2 = std::numbers::sqrt2;
  EXPECT_NEAR(b0[0], r2, 1e-15);
  EXPECT_NEAR(b0[1], 0.0, 1e-15);
  EXPECT_NEAR(b0[2], r2, 1e-15);
  EXPECT_NEAR(b0[3], 0.0, 1e-15);
  const auto b1 = rkhs_basis(0.25, 2);
  EXPECT_NEAR(b1[0], 0.0, 1e-15);
  EXPECT_NEAR(b1[1], r2, 1e-15);
}

TEST(RkhsBasis, OrthonormalUnderMidpointQuadrature) {
  const std::size_t dim = 12, m = 100000;
  std::vector<std::vector<double>> gram(dim, std::vector<double>(dim, 0.0));
  for (std::size_t k = 0; k < m; ++k) {
    const auto b = rkhs_basis((static_cast<double>(k) + 0.5) / m, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) gram[i][j] += b[i] * b[j] / m;
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) EXPECT_NEAR(gram[i][j], i == j ? 1.0 : 0.0, 1e-6);
}

TEST(RkhsBasis, DomainError) {
  EXPECT_NO_THROW(rkhs_basis(1.0 + 5e-13, 2));
  try {
    rkhs_basis(1.001, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DomainError);
  }
  EXPECT_THROW(rkhs_basis(-0.01, 2), Error);
}

TEST(RkhsBasis, Eigenvalues) {
  EXPECT_DOUBLE_EQ(rkhs_eigenvalue(0), std::pow(2.0 * std::numbers::pi, -4));
  EXPECT_DOUBLE_EQ(rkhs_eigenvalue(1), rkhs_eigenvalue(0));
  EXPECT_DOUBLE_EQ(rkhs_eigenvalue(2), std::pow(4.0 * std::numbers::pi, -4));
}

TEST(ScaleToUnit, Examples) {
  const std::vector<double> a{-1.0, 0.0, 1.0};
  EXPECT_EQ(scale_to_unit(a), (std::vector<double>{0.0, 0.5, 1.0}));
  const std::vector<double> b{0.0, 0.3, 1.0, 0.3};
  EXPECT_EQ(scale_to_unit(b), b);
  try {
    scale_to_unit(std::vector<double>(5, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateConditioning);
  }
}

TEST(ScaleToUnit, PreservesOrderAndTies) {
  std::mt19937_64 eng(41);
  const auto s = random_scores(300, eng, true);
  const auto u = scale_to_unit(s.v);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < u.size(); ++j) {
      EXPECT_EQ(s.v[i] < s.v[j], u[i] < u[j]);
      EXPECT_EQ(s.v[i] == s.v[j], u[i] == u[j]);
    }
}

TEST(GammaGrid, Examples) {
  const auto g = gamma_grid(50, 1e-5, 1e-3);
  ASSERT_EQ(g.size(), 50u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-3);
  EXPECT_DOUBLE_EQ(g.back(), 1e-5);
  for (std::size_t k = 1; k < g.size(); ++k) EXPECT_LT(g[k], g[k - 1]);
  EXPECT_EQ(gamma_grid(1, 1e-5, 1e-3), std::vector<double>{1e-3});
  const auto three = gamma_grid(3, 1e-4, 1e-2);
  EXPECT_DOUBLE_EQ(three[0], 1e-2);
  EXPECT_NEAR(three[1], 1e-3, 1e-18);
  EXPECT_DOUBLE_EQ(three[2], 1e-4);
  EXPECT_THROW(gamma_grid(0, 1e-5, 1e-3), Error);
  EXPECT_THROW(gamma_grid(3, 1e-3, 1e-5), Error);
}

TEST(MakeRkhs, RoundsOddDimensionsUp) {
  EXPECT_EQ(make_rkhs(7, 0.1).dim, 8u);
  EXPECT_EQ(make_rkhs(100, 0.1).dim, 100u);
  EXPECT_THROW(make_rkhs(10, 1.5), Error);
  EXPECT_THROW(make_rkhs(10, 0.5, 0.0), Error);
}

TEST(Workspace, ZeroScoresGiveZeroU) {
  std::mt19937_64 eng(42);
  auto s = random_scores(40, eng);
  std::fill(s.phi.begin(), s.phi.end(), 0.0);
  const auto ws = build_workspace(s, 10);
  EXPECT_EQ(ws.u.norm(), 0.0);
}

TEST(Workspace, HandDatasetMatchesLoopOracle) {
  ScoreSet s;
  s.v = {-0.4, 0.1, 0.9};
  s.phi = {0.7, -1.2, 0.5};
  const auto ws = build_workspace(s, 2);
  // Loop-order oracle: scale, evaluate, center, accumulate in long double.
  const long double lo = -0.4L, span = 1.3L;
  long double basis[3][2];
  for (int i = 0; i < 3; ++i) {
    const long double x = (s.v[i] - lo) / span;
    basis[i][0] = std::sqrt(2.0L) * std::cos(2.0L * std::numbers::pi_v<long double> * x);
    basis[i][1] = std::sqrt(2.0L) * std::sin(2.0L * std::numbers::pi_v<long double> * x);
  }
  for (int j = 0; j < 2; ++j) {
    const long double mean = (basis[0][j] + basis[1][j] + basis[2][j]) / 3;
    long double acc = 0;
    for (int i = 2; i >= 0; --i) acc += (basis[i][j] - mean) * s.phi[i];
    EXPECT_NEAR(ws.u[j], static_cast<double>(acc / 3), 1e-12);
  }
}

TEST(Workspace, Invariants) {
  std::mt19937_64 eng(43);
  const auto s = random_scores(150, eng);
  const auto ws = build_workspace(s, 20);
  EXPECT_LE(ws.phi.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_TRUE(ws.gamma_diag.minCoeff() > 0.0);
  EXPECT_LE((ws.vmat - ws.vmat.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ws.vmat);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  EXPECT_NEAR(ws.vmat.trace(), ws.phi.rowwise().squaredNorm().sum() / 150.0, 1e-10);
  Eigen::LLT<Eigen::MatrixXd> llt(penalty_matrix(ws, 1e-5));
  EXPECT_EQ(llt.info(), Eigen::Success);
}

TEST(Workspace, Errors) {
  ScoreSet s;
  s.v = {0.0, 1.0};
  s.phi = {1.0, -1.0};
  EXPECT_THROW(build_workspace(s, 2), Error);
  s.v = {0.0, 1.0, 2.0};
  s.phi = {1.0, -1.0, 0.0};
  EXPECT_THROW(build_workspace(s, 3), Error);
  s.v = {2.0, 2.0, 2.0};
  try {
    build_workspace(s, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateConditioning);
  }
}

TEST(RkhsStat, ZeroScores) {
  std::mt19937_64 eng(44);
  auto s = random_scores(30, eng);
  std::fill(s.phi.begin(), s.phi.end(), 0.0);
  const auto r = rkhs_stat(build_workspace(s, 6), 0.3, 1.0);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.a_hat.norm(), 0.0);
}

TEST(RkhsStat, DiagonalArithmetic) {
  const auto ws = diagonal_workspace(Eigen::Vector2d(2.0, 4.0), Eigen::Vector2d(1.0, 1.0),
                                     Eigen::Vector2d(1.0, 0.0), 4);
  const auto r = rkhs_stat(ws, 0.5, 1.0);
  EXPECT_NEAR(r.statistic, 1.0 / 1.5, 1e-15);
  EXPECT_NEAR(r.a_hat[0], 1.0 / 1.5, 1e-15);
  EXPECT_NEAR(r.a_hat[1], 0.0, 1e-15);
}

TEST(RkhsStat, IdentityPenaltyReducesToSquaredNorm) {
  const Eigen::Vector4d z(0.3, -1.1, 2.0, 0.25);
  const auto ws = diagonal_workspace(Eigen::Vector4d::Ones(), Eigen::Vector4d(3.0, 1.0, 0.2, 5.0), z, 9);
  EXPECT_NEAR(rkhs_stat(ws, 1.0, 2.0).statistic, z.squaredNorm() / 2.0, 1e-14);
}

TEST(RkhsStat, MatchesLagrangianAscent) {
  std::mt19937_64 eng(45);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t dim = 2 * (1 + eng() % 10);
    const auto s = random_scores(60 + eng() % 140, eng);
    const double gamma = std::pow(10.0, -3.0 * std::generate_canonical<double, 53>(eng));
    const double eta = 0.5 + std::generate_canonical<double, 53>(eng);
    const auto ws = build_workspace(s, dim);
    const auto r = rkhs_stat(ws, gamma, eta);
    const Eigen::VectorXd z = std::sqrt(static_cast<double>(ws.n())) * ws.u;
    const Eigen::MatrixXd m = penalty_matrix(ws, gamma);
    const auto a = oracle::lagrangian_ascent(to_rows(m), {z.data(), z.data() + z.size()}, eta, 1e-10);
    const Eigen::Map<const Eigen::VectorXd> av(a.data(), static_cast<Eigen::Index>(a.size()));
    EXPECT_LE((r.a_hat - av).norm(), 1e-6 * av.norm()) << "rep " << rep;
    // Objective at the maximizer is T / 2.
    const double objective = z.dot(av) - 0.5 * eta * av.dot(m * av);
    EXPECT_NEAR(r.statistic, 2.0 * objective, 1e-6 * r.statistic);
    // First-order condition sqrt(n) U = eta M a_hat.
    EXPECT_LE((z - eta * m * r.a_hat).norm(), 1e-8 * z.norm());
  }
}

TEST(RkhsStat, GammaZeroNeedsFullRankV) {
  std::mt19937_64 eng(46);
  const auto s = random_scores(8, eng);  // n - 1 < D: V is rank deficient
  const auto ws = build_workspace(s, 20);
  try {
    rkhs_stat(ws, 0.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularPenalty);
  }
  const PenaltyFactor ridged(ws, 0.0, 1.0, RidgePolicy::Fallback);
  EXPECT_TRUE(ridged.ridged());
  const auto big = random_scores(400, eng);
  EXPECT_NO_THROW(rkhs_stat(build_workspace(big, 6), 0.0, 1.0));
}

TEST(RkhsStat, ScalingProperties) {
  std::mt19937_64 eng(47);
  const auto s = random_scores(120, eng);
  auto scaled = s;
  for (double& p : scaled.phi) p *= 3.0;
  const auto a = rkhs_stat(build_workspace(s, 10), 0.01, 1.0);
  const auto b = rkhs_stat(build_workspace(scaled, 10), 0.01, 1.0);
  EXPECT_NEAR(b.statistic, 9.0 * a.statistic, 1e-12 * b.statistic);
  EXPECT_LE((b.a_hat / b.a_hat.norm() - a.a_hat / a.a_hat.norm()).norm(), 1e-12);
  const auto c = rkhs_stat(build_workspace(s, 10), 0.01, 4.0);
  EXPECT_NEAR(c.statistic, a.statistic / 4.0, 1e-13 * a.statistic);
}

TEST(Spectrum, MatchesCholeskyAcrossGammaGrid) {
  std::mt19937_64 eng(48);
  const auto s = random_scores(250, eng);
  const auto ws = build_workspace(s, 40);
  const RkhsSpectrum spectrum(ws);
  const Eigen::VectorXd z = std::sqrt(250.0) * ws.u;
  const Eigen::VectorXd rotated = spectrum.rotate(z);
  for (double gamma : gamma_grid(10, 1e-5, 1.0)) {
    const PenaltyFactor factor(ws, gamma, 1.0);
    EXPECT_NEAR(spectrum.statistic(rotated, gamma, 1.0), factor.statistic(z), 1e-9 * factor.statistic(z))
        << gamma;
  }
}

TEST(Indicator, ZeroScores) {
  ScoreSet s;
  s.v = {0.1, 0.5, 0.2};
  s.phi = {0.0, 0.0, 0.0};
  EXPECT_EQ(indicator_stat(s).statistic, 0.0);
}

TEST(Indicator, TwoPointExample) {
  ScoreSet s;
  s.v = {1.0, 2.0};
  s.phi = {-1.0, 1.0};
  const auto r = indicator_stat(s);
  EXPECT_NEAR(r.statistic, std::numbers::sqrt2 * 0.5, 1e-15);
  EXPECT_EQ(r.threshold, 1.0);
  EXPECT_NEAR(r.statistic, oracle::indicator_brute_force(s.v, s.phi), 1e-15);
}

TEST(Indicator, MatchesBruteForce) {
  std::mt19937_64 eng(49);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 2 + eng() % 199;
    const auto s = random_scores(n, eng, rep % 3 == 0);
    const auto c = center_scores(s);
    EXPECT_NEAR(indicator_stat(s).statistic, oracle::indicator_brute_force(c.v, c.phi), 1e-12) << rep;
  }
}

TEST(Indicator, TiesCollapseAndSmallestThresholdWins) {
  ScoreSet s;
  s.v = {0.0, 1.0, 1.0, 2.0, 3.0};
  s.phi = {1.0, -1.0, 2.0, -2.0, 0.0};
  // Thresholds 0, 1, 2, 3 give partial sums 1, 2, 0, 0: maximized at 1 only
  // after both tied observations are included.
  EXPECT_EQ(indicator_stat(s).threshold, 1.0);
  ScoreSet sym;
  sym.v = {0.0, 1.0, 2.0, 3.0};
  sym.phi = {1.0, -1.0, 1.0, -1.0};  // |partial sums| 1, 0, 1: tie at 0 and 2
  EXPECT_EQ(indicator_stat(sym).threshold, 0.0);
}

TEST(Indicator, PositiveScaling) {
  std::mt19937_64 eng(50);
  const auto s = random_scores(90, eng);
  auto scaled = s;
  for (double& p : scaled.phi) p *= 2.5;
  const auto a = indicator_stat(s), b = indicator_stat(scaled);
  EXPECT_NEAR(b.statistic, 2.5 * a.statistic, 1e-13);
  EXPECT_EQ(a.threshold, b.threshold);
}

TEST(LinearForm, ZeroAndUnitMultipliers) {
  std::mt19937_64 eng(51);
  const auto s = random_scores(80, eng);
  const std::vector<double> zero(80, 0.0), one(80, 1.0);
  for (const FunctionClassSpec& spec : {FunctionClassSpec{IndicatorClass{}}, FunctionClassSpec{make_rkhs(8, 0.01)}}) {
    EXPECT_EQ(bootstrap_linear_form(s, spec, zero), 0.0);
    const auto c = center_scores(s);
    EXPECT_EQ(bootstrap_linear_form(s, spec, one), ClassBank(c, {spec}).evaluate(c.phi).front());
  }
  EXPECT_EQ(bootstrap_linear_form(s, IndicatorClass{}, one), indicator_stat(s).statistic);
  EXPECT_NEAR(bootstrap_linear_form(s, make_rkhs(8, 0.01), one), rkhs_stat(build_workspace(s, 8), 0.01, 1.0).statistic,
              1e-10 * rkhs_stat(build_workspace(s, 8), 0.01, 1.0).statistic);
  EXPECT_THROW(bootstrap_linear_form(s, IndicatorClass{}, std::vector<double>(3, 1.0)), Error);
}

TEST(LinearForm, RkhsMatchesFreshFactorization) {
  std::mt19937_64 eng(52);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 30; ++rep) {
    const auto s = random_scores(100 + eng() % 100, eng);
    std::vector<double> xi(s.n());
    for (double& x : xi) x = z(eng);
    const double gamma = std::pow(10.0, -5.0 + 5.0 * std::generate_canonical<double, 53>(eng));
    const auto spec = make_rkhs(20, gamma);
    // Fresh route: weighted scores, new workspace, new Cholesky factor.
    const auto c = center_scores(s);
    ScoreSet weighted = c;
    for (std::size_t i = 0; i < xi.size(); ++i) weighted.phi[i] = xi[i] * c.phi[i];
    const double fresh = rkhs_stat(build_workspace(weighted, 20), gamma, 1.0).statistic;
    EXPECT_NEAR(bootstrap_linear_form(s, spec, xi), fresh, 1e-10 * fresh) << rep;
  }
}
