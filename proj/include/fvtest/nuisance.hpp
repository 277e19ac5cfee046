#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fvtest/datamodel.hpp"
#include "fvtest/error.hpp"

namespace fvtest {

// ---------------------------------------------------------------------------
// Natural cubic spline basis.
//
// Knots kappa_1 < ... < kappa_K are mapped to tau_k in [0,1] through
// u = (x - kappa_1) / (kappa_K - kappa_1). The K basis functions are
//   N_1 = 1,  N_2 = u,  N_{k+2} = d_k(u) - d_{K-1}(u),  k = 1..K-2,
//   d_k(u) = [(u - tau_k)_+^3 - (u - tau_K)_+^3] / (tau_K - tau_k),
// which are cubic between knots and linear outside [tau_1, tau_K].
// ---------------------------------------------------------------------------
namespace spline_detail {

inline double cube_plus(double z) { return z > 0.0 ? z * z * z : 0.0; }

inline void basis_row(double u, std::span<const double> tau, double* out) {
  const std::size_t k_count = tau.size();
  out[0] = 1.0;
  if (k_count < 2) return;
  out[1] = u;
  const double t_last = tau[k_count - 1];
  auto d = [&](std::size_t k) {
    return (cube_plus(u - tau[k]) - cube_plus(u - t_last)) / (t_last - tau[k]);
  };
  const double d_ref = d(k_count - 2);
  for (std::size_t k = 0; k + 2 < k_count; ++k) out[k + 2] = d(k) - d_ref;
}

// Second derivative of basis function j (0-based) at u.
inline double basis_second_derivative(std::size_t j, double u, std::span<const double> tau) {
  if (j < 2) return 0.0;
  const std::size_t k_count = tau.size();
  const double t_last = tau[k_count - 1];
  auto dpp = [&](std::size_t k) {
    const double a = u > tau[k] ? u - tau[k] : 0.0;
    const double b = u > t_last ? u - t_last : 0.0;
    return 6.0 * (a - b) / (t_last - tau[k]);
  };
  return dpp(j - 2) - dpp(k_count - 2);
}

// Integral of N_j'' N_k'' over [tau_1, tau_K] on the u scale. The
// integrand is piecewise quadratic, so Simpson's rule per knot interval is exact.
inline Eigen::MatrixXd penalty_matrix_unit(std::span<const double> tau) {
  const auto k_count = static_cast<Eigen::Index>(tau.size());
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(k_count, k_count);
  for (std::size_t seg = 0; seg + 1 < tau.size(); ++seg) {
    const double a = tau[seg], b = tau[seg + 1];
    const double m = 0.5 * (a + b);
    const double w = (b - a) / 6.0;
    for (Eigen::Index j = 2; j < k_count; ++j) {
      const double ja = basis_second_derivative(j, a, tau);
      const double jm = basis_second_derivative(j, m, tau);
      const double jb = basis_second_derivative(j, b, tau);
      for (Eigen::Index k = j; k < k_count; ++k) {
        const double ka = basis_second_derivative(k, a, tau);
        const double km = basis_second_derivative(k, m, tau);
        const double kb = basis_second_derivative(k, b, tau);
        omega(j, k) += w * (ja * ka + 4.0 * jm * km + jb * kb);
      }
    }
  }
  return omega.selfadjointView<Eigen::Upper>();
}

}  // namespace spline_detail

/// A fitted penalized natural cubic spline.
struct SmoothFit {
  std::vector<double> knots;     // x scale, strictly increasing
  Eigen::VectorXd coefficients;  // weights on the unit-scale basis above
  double penalty = 0.0;
  std::pair<double, double> x_range{0.0, 0.0};
  double effective_df = 0.0;     // trace of the hat matrix

  std::vector<double> unit_knots() const {
    std::vector<double> tau(knots.size());
    const double lo = knots.front(), span = knots.back() - knots.front();
    for (std::size_t k = 0; k < knots.size(); ++k) tau[k] = (knots[k] - lo) / span;
    tau.front() = 0.0;
    tau.back() = 1.0;
    return tau;
  }

  double operator()(double x) const {
    const auto tau = unit_knots();
    return evaluate(x, tau);
  }

  double evaluate(double x, std::span<const double> tau) const {
    const double u = (x - knots.front()) / (knots.back() - knots.front());
    Eigen::VectorXd row(coefficients.size());
    spline_detail::basis_row(u, tau, row.data());
    return row.dot(coefficients);
  }
};

inline std::vector<double> predict(const SmoothFit& fit, std::span<const double> x) {
  const auto tau = fit.unit_knots();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fit.evaluate(x[i], tau);
  return out;
}

/// Design matrix of the natural spline basis for the given x-scale knots.
inline Eigen::MatrixXd spline_design(std::span<const double> x, std::span<const double> knots) {
  const double lo = knots.front(), span = knots.back() - knots.front();
  std::vector<double> tau(knots.size());
  for (std::size_t k = 0; k < knots.size(); ++k) tau[k] = (knots[k] - lo) / span;
  tau.front() = 0.0;
  tau.back() = 1.0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis(
      static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(knots.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    spline_detail::basis_row((x[i] - lo) / span, tau, basis.row(static_cast<Eigen::Index>(i)).data());
  return basis;
}

/// Roughness penalty integral of f''(x)^2 on the x scale, as a quadratic form in
/// the unit-scale coefficients: (1/span^3) times the unit-scale penalty.
inline Eigen::MatrixXd spline_penalty(std::span<const double> knots) {
  const double lo = knots.front(), span = knots.back() - knots.front();
  std::vector<double> tau(knots.size());
  for (std::size_t k = 0; k < knots.size(); ++k) tau[k] = (knots[k] - lo) / span;
  tau.front() = 0.0;
  tau.back() = 1.0;
  return spline_detail::penalty_matrix_unit(tau) / (span * span * span);
}

/// Type-7 sample quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::size_t default_num_knots(std::size_t n) { return std::min<std::size_t>(10, n / 10 + 2); }

/// Knots at evenly spaced quantiles of x; duplicates are dropped, so the
/// result may hold fewer than num_knots entries.
inline std::vector<double> quantile_knots(std::span<const double> x, std::size_t num_knots) {
  if (num_knots < 2)
    throw Error(ErrorCode::InvalidConfig, "nuisance", "num_knots must be at least 2");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw Error(ErrorCode::SingularSystem, "nuisance", "all x values are identical");
  std::vector<double> knots;
  for (std::size_t k = 0; k < num_knots; ++k) {
    const double q = sorted_quantile(sorted, static_cast<double>(k) / static_cast<double>(num_knots - 1));
    if (knots.empty() || q > knots.back()) knots.push_back(q);
  }
  knots.front() = sorted.front();
  knots.back() = sorted.back();
  return knots;
}

inline std::vector<double> default_penalty_grid() {
  std::vector<double> grid(20);
  for (int k = 0; k < 20; ++k) grid[k] = std::pow(10.0, -6.0 + 8.0 * k / 19.0);
  return grid;
}

namespace spline_detail {

/// Penalized least squares min |y - B b|^2 + penalty b' Omega b, kept in
/// augmented form [B; sqrt(penalty) R] with Omega = R'R so the solve never
/// squares the condition number of B.
struct System {
  Eigen::MatrixXd basis;
  Eigen::VectorXd y;
  Eigen::MatrixXd penalty_root;
};

inline System make_system(Eigen::MatrixXd basis, std::span<const double> y, const Eigen::MatrixXd& omega) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  System sys;
  sys.basis = std::move(basis);
  sys.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  sys.penalty_root = root.asDiagonal() * es.eigenvectors().transpose();
  return sys;
}

struct Solved {
  Eigen::VectorXd beta;
  double trace_hat;
};

inline Solved solve_penalized(const System& sys, double penalty) {
  const Eigen::Index n = sys.basis.rows(), p = sys.basis.cols();
  Eigen::MatrixXd aug(n + p, p);
  aug.topRows(n) = sys.basis;
  aug.bottomRows(p) = std::sqrt(penalty) * sys.penalty_root;
  // Column equilibration: truncated-power columns differ in scale by orders
  // of magnitude.
  const Eigen::VectorXd scale = aug.colwise().norm().transpose().cwiseMax(1e-300).cwiseInverse();
  aug = aug * scale.asDiagonal();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + p);
  rhs.head(n) = sys.y;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aug);
  qr.setThreshold(1e-13);
  if (qr.rank() < p)
    throw Error(ErrorCode::SingularSystem, "nuisance",
                "penalized normal equations are singular; reduce num_knots");
  Solved s;
  s.beta = scale.asDiagonal() * qr.solve(rhs);
  // Hat matrix trace = squared Frobenius norm of the data rows of thin Q.
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n + p, p);
  s.trace_hat = q.topRows(n).squaredNorm();
  return s;
}

inline void check_inputs(std::span<const double> x, std::span<const double> y, std::size_t num_knots) {
  if (x.size() != y.size())
    throw Error(ErrorCode::LengthMismatch, "nuisance",
                "x has " + std::to_string(x.size()) + " values, y has " + std::to_string(y.size()));
  if (x.size() < std::max<std::size_t>(4, num_knots))
    throw Error(ErrorCode::InvalidValue, "nuisance",
                "need at least max(4, num_knots) observations, got " + std::to_string(x.size()));
}

}  // namespace spline_detail

/// Penalized least squares over natural cubic splines with quantile knots:
/// minimizes sum (y_i - f(x_i))^2 + penalty * integral f''(x)^2 dx.
inline SmoothFit fit_spline(std::span<const double> x, std::span<const double> y,
                            std::size_t num_knots, double penalty) {
  spline_detail::check_inputs(x, y, num_knots);
  if (!(penalty >= 0.0))
    throw Error(ErrorCode::InvalidConfig, "nuisance", "penalty must be non-negative");
  SmoothFit fit;
  fit.knots = quantile_knots(x, num_knots);
  const auto sys = spline_detail::make_system(spline_design(x, fit.knots), y, spline_penalty(fit.knots));
  auto solved = spline_detail::solve_penalized(sys, penalty);
  fit.coefficients = std::move(solved.beta);
  fit.effective_df = solved.trace_hat;
  fit.penalty = penalty;
  fit.x_range = {fit.knots.front(), fit.knots.back()};
  return fit;
}

/// Generalized cross-validation over a penalty grid. Scores within a relative
/// 1e-9 (plus a tiny absolute floor scaled by sum y^2) of the minimum count as
/// ties, and ties go to the largest penalty.
inline double select_penalty_gcv(std::span<const double> x, std::span<const double> y,
                                 std::size_t num_knots, std::span<const double> penalty_grid) {
  if (penalty_grid.empty())
    throw Error(ErrorCode::InvalidConfig, "nuisance", "penalty grid is empty");
  for (double p : penalty_grid)
    if (!(p >= 0.0)) throw Error(ErrorCode::InvalidConfig, "nuisance", "penalty grid has a negative value");
  if (penalty_grid.size() == 1) return penalty_grid.front();

  spline_detail::check_inputs(x, y, num_knots);
  const auto knots = quantile_knots(x, num_knots);
  const auto sys = spline_detail::make_system(spline_design(x, knots), y, spline_penalty(knots));
  const double n = static_cast<double>(y.size());

  std::vector<double> scores(penalty_grid.size());
  for (std::size_t g = 0; g < penalty_grid.size(); ++g) {
    auto solved = spline_detail::solve_penalized(sys, penalty_grid[g]);
    const double rss = (sys.y - sys.basis * solved.beta).squaredNorm();
    const double dof = n - solved.trace_hat;
    scores[g] = dof > 0.0 ? n * rss / (dof * dof) : std::numeric_limits<double>::infinity();
  }
  const double best = *std::min_element(scores.begin(), scores.end());
  const double tol = 1e-9 * best + 1e-24 * (1.0 + sys.y.squaredNorm());
  double chosen = -1.0;
  for (std::size_t g = 0; g < penalty_grid.size(); ++g)
    if (scores[g] <= best + tol) chosen = std::max(chosen, penalty_grid[g]);
  return chosen;
}

struct SmoothOptions {
  std::size_t num_knots = 0;  // 0: min(10, n/10 + 2)
  std::vector<double> penalty_grid = default_penalty_grid();
};

/// Knot count from options, GCV-selected penalty, then the fit.
inline SmoothFit fit_spline_auto(std::span<const double> x, std::span<const double> y,
                                 const SmoothOptions& opt = {}) {
  const std::size_t knots = opt.num_knots ? opt.num_knots : default_num_knots(x.size());
  const double penalty = select_penalty_gcv(x, y, knots, opt.penalty_grid);
  return fit_spline(x, y, knots, penalty);
}

// ---------------------------------------------------------------------------
// Additive model: y ~ intercept + sum_j f_j(x_j), fitted by backfitting.
// ---------------------------------------------------------------------------

struct AdditiveFit {
  double intercept = 0.0;
  std::vector<SmoothFit> components;
  std::vector<double> offsets;  // training mean of each component, removed for identifiability
  int cycles = 0;

  double operator()(std::span<const double> x) const {
    double f = intercept;
    for (std::size_t j = 0; j < components.size(); ++j) f += components[j](x[j]) - offsets[j];
    return f;
  }
};

inline constexpr int kBackfitMaxCycles = 30;
inline constexpr double kBackfitTolerance = 1e-8;

/// columns[j][i] is covariate j of observation i.
inline AdditiveFit fit_additive(const std::vector<std::vector<double>>& columns,
                                std::span<const double> y, const SmoothOptions& opt = {}) {
  if (columns.empty()) throw Error(ErrorCode::InvalidValue, "nuisance", "no covariates to fit on");
  AdditiveFit fit;
  if (columns.size() == 1) {
    fit.components.push_back(fit_spline_auto(columns[0], y, opt));
    fit.offsets.push_back(0.0);
    fit.cycles = 1;
    return fit;
  }

  const std::size_t n = y.size();
  const std::size_t d = columns.size();
  double mean_y = 0.0;
  for (double v : y) mean_y += v;
  mean_y /= static_cast<double>(n);
  fit.intercept = mean_y;

  std::vector<std::vector<double>> fitted(d, std::vector<double>(n, 0.0));
  std::vector<double> penalties(d, -1.0);
  fit.components.resize(d);
  fit.offsets.assign(d, 0.0);
  std::vector<double> partial(n);
  const std::size_t knots = opt.num_knots ? opt.num_knots : default_num_knots(n);

  for (int cycle = 1; cycle <= kBackfitMaxCycles; ++cycle) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        double others = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          if (k != j) others += fitted[k][i];
        partial[i] = y[i] - mean_y - others;
      }
      if (penalties[j] < 0.0) penalties[j] = select_penalty_gcv(columns[j], partial, knots, opt.penalty_grid);
      SmoothFit next = fit_spline(columns[j], partial, knots, penalties[j]);
      auto f = predict(next, columns[j]);
      double mean_f = 0.0;
      for (double v : f) mean_f += v;
      mean_f /= static_cast<double>(n);
      for (double& v : f) v -= mean_f;
      if (cycle > 1) {
        const Eigen::Index m = std::min(next.coefficients.size(), fit.components[j].coefficients.size());
        for (Eigen::Index c = 0; c < m; ++c)
          max_change = std::max(max_change,
                                std::abs(next.coefficients[c] - fit.components[j].coefficients[c]));
      } else {
        max_change = std::numeric_limits<double>::infinity();
      }
      fit.components[j] = std::move(next);
      fit.offsets[j] = mean_f;
      fitted[j] = std::move(f);
    }
    fit.cycles = cycle;
    if (max_change < kBackfitTolerance) break;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Propensity score model.
// ---------------------------------------------------------------------------

inline constexpr double kPropensityClip = 0.01;

struct PropensityModel {
  enum class Kind { KnownConstant, SplineLogistic };

  Kind kind = Kind::KnownConstant;
  double constant = 0.5;
  std::vector<std::vector<double>> knots;  // one knot vector per covariate
  Eigen::VectorXd coefficients;            // intercept, then K-1 columns per covariate
  int iterations = 0;

  /// Unclipped probability.
  double raw(std::span<const double> x) const {
    if (kind == Kind::KnownConstant) return constant;
    double eta = coefficients[0];
    Eigen::Index col = 1;
    for (std::size_t j = 0; j < knots.size(); ++j) {
      const Eigen::MatrixXd row = spline_design(std::span<const double>(&x[j], 1), knots[j]);
      for (Eigen::Index k = 1; k < row.cols(); ++k) eta += row(0, k) * coefficients[col++];
    }
    return 1.0 / (1.0 + std::exp(-eta));
  }

  /// Probability clipped to [0.01, 0.99].
  double operator()(std::span<const double> x) const {
    return std::clamp(raw(x), kPropensityClip, 1.0 - kPropensityClip);
  }
};

struct PropensityOptions {
  std::optional<double> known;  // randomized design with known Pr(T = 1)
  double penalty = 1.0;
  std::size_t num_knots = 0;    // 0: default rule
};

inline constexpr int kIrlsMaxIterations = 50;

/// covariates[j][i]; treatment[i] in {0, 1}.
inline PropensityModel fit_propensity(const std::vector<std::vector<double>>& covariates,
                                      std::span<const int> treatment,
                                      const PropensityOptions& opt = {}) {
  PropensityModel model;
  if (opt.known) {
    if (!(*opt.known > 0.0 && *opt.known < 1.0))
      throw Error(ErrorCode::InvalidConfig, "nuisance", "known propensity must lie in (0, 1)");
    model.constant = *opt.known;
    return model;
  }
  const std::size_t n = treatment.size();
  std::size_t treated = 0;
  for (int t : treatment) treated += static_cast<std::size_t>(t == 1);
  if (treated == 0 || treated == n) {
    // No overlap to model; the clipped constant is the positivity guard.
    model.constant = static_cast<double>(treated) / static_cast<double>(n);
    return model;
  }

  model.kind = PropensityModel::Kind::SplineLogistic;
  const std::size_t knots_per = opt.num_knots ? opt.num_knots : default_num_knots(n);
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<Eigen::MatrixXd> penalties;
  Eigen::Index p = 1;
  for (const auto& col : covariates) {
    if (col.size() != n) throw Error(ErrorCode::LengthMismatch, "nuisance", "covariate length != n");
    model.knots.push_back(quantile_knots(col, knots_per));
    blocks.push_back(spline_design(col, model.knots.back()));
    penalties.push_back(spline_penalty(model.knots.back()));
    p += blocks.back().cols() - 1;
  }
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), p);
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(p, p);
  design.col(0).setOnes();
  Eigen::Index col = 1;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const Eigen::Index w = blocks[j].cols() - 1;
    design.middleCols(col, w) = blocks[j].rightCols(w);
    omega.block(col, col, w, w) = penalties[j].bottomRightCorner(w, w);
    col += w;
  }

  Eigen::VectorXd t(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) t[static_cast<Eigen::Index>(i)] = treatment[i];
  const double mean_t = t.mean();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta[0] = std::log(mean_t / (1.0 - mean_t));

  for (int iter = 1; iter <= kIrlsMaxIterations; ++iter) {
    const Eigen::VectorXd eta = design * beta;
    const Eigen::VectorXd prob = (1.0 + (-eta.array()).exp()).inverse().matrix();
    const Eigen::VectorXd w = (prob.array() * (1.0 - prob.array())).max(1e-10).matrix();
    const Eigen::VectorXd z = eta + ((t - prob).array() / w.array()).matrix();
    const Eigen::MatrixXd lhs = design.transpose() * w.asDiagonal() * design + opt.penalty * omega;
    const Eigen::VectorXd rhs = design.transpose() * (w.asDiagonal() * z);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
    if (ldlt.info() != Eigen::Success)
      throw Error(ErrorCode::SingularSystem, "nuisance", "IRLS system is singular");
    const Eigen::VectorXd next = ldlt.solve(rhs);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    model.iterations = iter;
    if (change < 1e-8 * (1.0 + beta.cwiseAbs().maxCoeff())) {
      model.coefficients = beta;
      return model;
    }
  }
  throw Error(ErrorCode::Nonconvergence, "nuisance",
              "propensity IRLS did not converge in " + std::to_string(kIrlsMaxIterations) + " iterations");
}

}  // namespace fvtest
