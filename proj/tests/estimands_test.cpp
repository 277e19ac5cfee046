#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "fvtest/estimands.hpp"
#include "oracles.hpp"

using namespace fvtest;

namespace {

using Model = std::function<double(std::span<const double>)>;

Dataset condmean_data(std::span<const double> y, std::span<const double> v) {
  Dataset ds;
  ds.estimand = Estimand::CondMean;
  for (std::size_t i = 0; i < y.size(); ++i) ds.observations.push_back({y[i], {v[i]}, {}, {}, {}});
  return ds;
}

Dataset trial(std::size_t n, std::mt19937_64& eng, double effect_slope = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin(0.5);
  Dataset ds;
  ds.estimand = Estimand::Cate;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = u(eng);
    const int t = coin(eng) ? 1 : 0;
    const double y = w + (1.0 + effect_slope * w) * t + z(eng);
    ds.observations.push_back({y, {w}, t, std::vector<double>{w}, {}});
  }
  return ds;
}

Dataset condcov_data(std::size_t n, std::mt19937_64& eng, double rho) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  Dataset ds;
  ds.estimand = Estimand::CondCov;
  for (std::size_t i = 0; i < n; ++i) {
    const double zz = u(eng);
    const double e1 = z(eng), e2 = rho * e1 + std::sqrt(1.0 - rho * rho) * z(eng);
    ds.observations.push_back({zz + e1, {zz}, {}, {}, zz * zz + e2});
  }
  return ds;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& eng) {
  std::normal_distribution<double> z;
  std::vector<double> v(n);
  for (double& x : v) x = z(eng);
  return v;
}

}  // namespace

TEST(CondMean, TwoPointCentering) {
  const std::vector<double> y{0.0, 1.0}, v{0.3, 0.7};
  const auto s = scores_condmean(condmean_data(y, v));
  EXPECT_EQ(s.phi, (std::vector<double>{-0.5, 0.5}));
  EXPECT_EQ(s.theta_hat, 0.5);
  EXPECT_EQ(s.v, v);
}

TEST(CondMean, ConstantOutcomeGivesZeroScores) {
  const std::vector<double> y(12, 4.5);
  std::vector<double> v(12);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto s = scores_condmean(condmean_data(y, v));
  for (double p : s.phi) EXPECT_EQ(p, 0.0);
}

TEST(CondMean, OneStepEqualsSampleCovariance) {
  std::mt19937_64 eng(21);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 2 + eng() % 199;
    const auto y = random_vector(n, eng), v = random_vector(n, eng), h = random_vector(n, eng);
    const auto s = scores_condmean(condmean_data(y, v));
    EXPECT_NEAR(one_step_estimate(s, h), oracle::covariance(y, h), 1e-12);
  }
}

TEST(CondMean, PsiIsASmoothOfYOnV) {
  std::mt19937_64 eng(22);
  std::vector<double> v(300), y(300);
  std::uniform_real_distribution<double> u;
  std::normal_distribution<double> z(0.0, 0.1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = u(eng);
    y[i] = v[i] * v[i] + z(eng);
  }
  const auto s = scores_condmean(condmean_data(y, v));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(s.psi_v[i], v[i] * v[i], 0.06);
}

TEST(Cate, ZeroOutcomeModelAndHalfPropensity) {
  std::mt19937_64 eng(23);
  const Dataset ds = trial(40, eng);
  const Model zero = [](std::span<const double>) { return 0.0; };
  PropensityModel half;
  half.constant = 0.5;
  const auto s = scores_cate(ds, zero, zero, half);
  double mean = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto& o = ds.observations[i];
    EXPECT_DOUBLE_EQ(s.phi[i], 2.0 * (2 * *o.treatment - 1) * o.outcome);
    mean += s.phi[i];
  }
  EXPECT_NEAR(s.theta_hat, mean / ds.n(), 1e-14);
}

TEST(Cate, ZeroOutcomeGivesZeroScores) {
  std::mt19937_64 eng(24);
  Dataset ds = trial(30, eng);
  for (auto& o : ds.observations) o.outcome = 0.0;
  const Model zero = [](std::span<const double>) { return 0.0; };
  PropensityModel p;
  p.constant = 0.3;
  const auto s = scores_cate(ds, zero, zero, p);
  for (double x : s.phi) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(s.theta_hat, 0.0);
}

TEST(Cate, DoublingOutcomeDoublesScores) {
  std::mt19937_64 eng(25);
  const Dataset ds = trial(50, eng);
  Dataset doubled = ds;
  for (auto& o : doubled.observations) o.outcome *= 2.0;
  const Model zero = [](std::span<const double>) { return 0.0; };
  PropensityModel half;
  const auto a = scores_cate(ds, zero, zero, half);
  const auto b = scores_cate(doubled, zero, zero, half);
  for (std::size_t i = 0; i < ds.n(); ++i) EXPECT_EQ(b.phi[i], 2.0 * a.phi[i]);
  EXPECT_EQ(b.theta_hat, 2.0 * a.theta_hat);
}

TEST(Cate, ThetaMatchesIndependentAipw) {
  std::mt19937_64 eng(26);
  const Dataset ds = trial(200, eng, 0.5);
  EstimandConfig cfg;
  cfg.estimand = Estimand::Cate;
  cfg.propensity.known = 0.5;
  const auto s = compute_scores(ds, cfg);

  // Same nuisance fits, separate arithmetic: outcome-model contrast plus
  // inverse-probability-weighted residual means per arm.
  std::vector<double> w1, y1, w0, y0;
  for (const auto& o : ds.observations) {
    ((*o.treatment == 1) ? w1 : w0).push_back(o.conditioning[0]);
    ((*o.treatment == 1) ? y1 : y0).push_back(o.outcome);
  }
  const auto mu1 = fit_additive({w1}, y1);
  const auto mu0 = fit_additive({w0}, y0);
  long double contrast = 0, treated = 0, control = 0;
  for (const auto& o : ds.observations) {
    const std::vector<double> x{o.conditioning[0]};
    contrast += mu1(x) - mu0(x);
    if (*o.treatment == 1) treated += (o.outcome - mu1(x)) / 0.5;
    else control += (o.outcome - mu0(x)) / 0.5;
  }
  const double n = static_cast<double>(ds.n());
  const double aipw = static_cast<double>((contrast + treated - control) / n);
  EXPECT_NEAR(s.theta_hat, aipw, 1e-10);
  EXPECT_NEAR(s.theta_hat, 1.0, 0.35);
}

TEST(Cate, PositivityGuard) {
  std::mt19937_64 eng(27);
  const Dataset ds = trial(40, eng);
  const Model zero = [](std::span<const double>) { return 0.0; };
  PropensityModel degenerate;
  degenerate.constant = 1.0;
  EstimandConfig cfg;
  cfg.estimand = Estimand::Cate;
  EXPECT_NO_THROW(scores_cate(ds, zero, zero, degenerate, cfg));  // clipped to 0.99
  cfg.clip_propensity = false;
  try {
    scores_cate(ds, zero, zero, degenerate, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PositivityViolation);
  }
}

TEST(Cate, TinyArmIsPositivityViolation) {
  std::mt19937_64 eng(28);
  Dataset ds = trial(30, eng);
  for (std::size_t i = 0; i < ds.n(); ++i) ds.observations[i].treatment = i < 2 ? 1 : 0;
  EstimandConfig cfg;
  cfg.estimand = Estimand::Cate;
  try {
    compute_scores(ds, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PositivityViolation);
  }
}

TEST(CondCov, PerfectOutcomeModelGivesZeroScores) {
  std::mt19937_64 eng(29);
  Dataset ds = condcov_data(50, eng, 0.2);
  for (auto& o : ds.observations) o.outcome = 3.0 * o.conditioning[0];
  const Model mu_y = [](std::span<const double> z) { return 3.0 * z[0]; };
  const Model mu_x = [](std::span<const double> z) { return z[0]; };
  const auto s = scores_condcov(ds, mu_y, mu_x);
  for (double x : s.phi) EXPECT_EQ(x, 0.0);
}

TEST(CondCov, ConstantFitsGiveSampleCovariance) {
  std::mt19937_64 eng(30);
  const Dataset ds = condcov_data(120, eng, 0.4);
  std::vector<double> y, x;
  for (const auto& o : ds.observations) {
    y.push_back(o.outcome);
    x.push_back(*o.secondary_outcome);
  }
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  const double xbar = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const Model mu_y = [=](std::span<const double>) { return ybar; };
  const Model mu_x = [=](std::span<const double>) { return xbar; };
  const auto s = scores_condcov(ds, mu_y, mu_x);
  EXPECT_NEAR(s.theta_hat, oracle::covariance(y, x), 1e-12);
}

TEST(CondCov, KnownConditionalMeansAreUnbiased) {
  std::mt19937_64 eng(31);
  const double rho = 0.3;
  const Model mu_y = [](std::span<const double> z) { return z[0]; };
  const Model mu_x = [](std::span<const double> z) { return z[0] * z[0]; };
  int covered = 0;
  double sum = 0.0, sum_sq = 0.0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const Dataset ds = condcov_data(400, eng, rho);
    const auto s = scores_condcov(ds, mu_y, mu_x);
    double var = 0.0;
    for (double p : s.phi) var += (p - s.theta_hat) * (p - s.theta_hat);
    const double se = std::sqrt(var / s.n() / s.n());
    covered += std::abs(s.theta_hat - rho) <= 3.0 * se;
    sum += s.theta_hat;
    sum_sq += s.theta_hat * s.theta_hat;
  }
  const double mean = sum / reps;
  const double mc_se = std::sqrt((sum_sq / reps - mean * mean) / reps);
  EXPECT_GE(covered, 190);
  EXPECT_LE(std::abs(mean - rho), 3.0 * mc_se);
}

TEST(CondCov, FittedNuisancesTrackTruth) {
  std::mt19937_64 eng(32);
  const Dataset ds = condcov_data(1000, eng, 0.5);
  EstimandConfig cfg;
  cfg.estimand = Estimand::CondCov;
  const auto s = compute_scores(ds, cfg);
  EXPECT_NEAR(s.theta_hat, 0.5, 0.1);
}

TEST(CenterScores, Examples) {
  ScoreSet s;
  s.phi = {1.0, 2.0, 3.0};
  EXPECT_EQ(center_scores(s).phi, (std::vector<double>{-1.0, 0.0, 1.0}));
  s.phi = {0.0, 0.0, 0.0};
  EXPECT_EQ(center_scores(s).phi, s.phi);
}

TEST(CenterScores, MeanZeroAndBitwiseIdempotent) {
  std::mt19937_64 eng(33);
  for (int rep = 0; rep < 200; ++rep) {
    ScoreSet s;
    s.phi = random_vector(2 + eng() % 500, eng);
    for (double& x : s.phi) x = 1e3 * x + 17.0;
    const auto c = center_scores(s);
    double mean = 0.0, max_abs = 0.0;
    for (double x : c.phi) {
      mean += x;
      max_abs = std::max(max_abs, std::abs(x));
    }
    EXPECT_LE(std::abs(mean / c.n()), 1e-12 * max_abs);
    EXPECT_EQ(center_scores(c).phi, c.phi);
  }
}

TEST(OneStep, InvariantToConstantShift) {
  std::mt19937_64 eng(34);
  for (int rep = 0; rep < 100; ++rep) {
    ScoreSet s;
    s.phi = random_vector(50, eng);
    const auto h = random_vector(50, eng);
    ScoreSet shifted = s;
    for (double& x : shifted.phi) x += 12.5;
    EXPECT_NEAR(one_step_estimate(shifted, h), one_step_estimate(s, h), 1e-12);
  }
}

TEST(ScoreSets, PermutationEquivariance) {
  std::mt19937_64 eng(35);
  const Dataset ds = trial(120, eng, 0.5);
  std::vector<std::size_t> perm(ds.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), eng);
  Dataset shuffled = ds;
  for (std::size_t i = 0; i < ds.n(); ++i) shuffled.observations[i] = ds.observations[perm[i]];
  EstimandConfig cfg;
  cfg.estimand = Estimand::Cate;
  cfg.propensity.known = 0.5;
  const auto a = compute_scores(ds, cfg);
  const auto b = compute_scores(shuffled, cfg);
  EXPECT_NEAR(a.theta_hat, b.theta_hat, 1e-10);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    EXPECT_EQ(b.v[i], a.v[perm[i]]);
    EXPECT_NEAR(b.phi[i], a.phi[perm[i]], 1e-9);
    EXPECT_NEAR(b.psi_v[i], a.psi_v[perm[i]], 1e-9);
  }
}

TEST(ComputeScores, EstimandMismatchIsRoleMismatch) {
  std::mt19937_64 eng(36);
  const Dataset ds = trial(30, eng);
  EstimandConfig cfg;
  cfg.estimand = Estimand::CondMean;
  try {
    compute_scores(ds, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RoleMismatch);
  }
}
