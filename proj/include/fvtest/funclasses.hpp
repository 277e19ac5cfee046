#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fvtest/error.hpp"
#include "fvtest/estimands.hpp"

namespace fvtest {

// ---------------------------------------------------------------------------
// Function class specifications
// ---------------------------------------------------------------------------

struct IndicatorClass {};

/// Truncated RKHS of the first D periodic eigenfunctions with the blended
/// smoothness/variance constraint gamma a'Gamma a + (1 - gamma) a'V a.
struct RkhsClass {
  std::size_t dim = 100;
  double gamma = 1.0;
  double eta = 1.0;
};

using FunctionClassSpec = std::variant<IndicatorClass, RkhsClass>;

/// Validated RKHS spec; odd dimensions are rounded up to keep sin/cos pairs.
inline RkhsClass make_rkhs(std::size_t dim, double gamma, double eta = 1.0) {
  if (dim < 2) throw Error(ErrorCode::InvalidConfig, "funclasses", "RKHS dimension must be >= 2");
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "funclasses", "gamma must lie in [0, 1]");
  if (!(eta > 0.0)) throw Error(ErrorCode::InvalidConfig, "funclasses", "eta must be positive");
  return RkhsClass{dim + (dim % 2), gamma, eta};
}

inline std::string describe(const FunctionClassSpec& spec) {
  if (std::holds_alternative<IndicatorClass>(spec)) return "indicator";
  const auto& r = std::get<RkhsClass>(spec);
  std::ostringstream out;
  out.precision(17);
  out << "rkhs(D=" << r.dim << ",gamma=" << r.gamma << ",eta=" << r.eta << ")";
  return out.str();
}

/// Geometric grid from gamma_max down to gamma_min, K points.
inline std::vector<double> gamma_grid(std::size_t k_count, double gamma_min, double gamma_max) {
  if (k_count < 1) throw Error(ErrorCode::InvalidConfig, "funclasses", "K must be >= 1");
  if (!(gamma_min > 0.0 && gamma_min <= gamma_max && gamma_max <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "funclasses", "need 0 < gamma_min <= gamma_max <= 1");
  std::vector<double> grid(k_count);
  const double ratio = gamma_min / gamma_max;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double e = k_count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(k_count - 1);
    grid[k] = gamma_max * std::pow(ratio, e);
  }
  if (k_count > 1) grid.back() = gamma_min;
  return grid;
}

// ---------------------------------------------------------------------------
// RKHS basis
// ---------------------------------------------------------------------------

/// Eigenvalue of basis function j (0-based): (2 m pi)^-4 with m = j/2 + 1.
inline double rkhs_eigenvalue(std::size_t j) {
  const double f = 2.0 * static_cast<double>(j / 2 + 1) * std::numbers::pi;
  return 1.0 / (f * f * f * f);
}

/// psi_{2m-1}(x) = sqrt2 cos(2 m pi x), psi_{2m}(x) = sqrt2 sin(2 m pi x).
inline void rkhs_basis_into(double x, std::size_t dim, double* out) {
  for (std::size_t j = 0; j < dim; j += 2) {
    const double arg = 2.0 * static_cast<double>(j / 2 + 1) * std::numbers::pi * x;
    out[j] = std::numbers::sqrt2 * std::cos(arg);
    if (j + 1 < dim) out[j + 1] = std::numbers::sqrt2 * std::sin(arg);
  }
}

inline std::vector<double> rkhs_basis(double x, std::size_t dim) {
  if (x < -1e-12 || x > 1.0 + 1e-12)
    throw Error(ErrorCode::DomainError, "funclasses", "basis argument outside [0, 1]");
  std::vector<double> out(dim);
  rkhs_basis_into(std::clamp(x, 0.0, 1.0), dim, out.data());
  return out;
}

/// Affine min-max map onto [0, 1].
inline std::vector<double> scale_to_unit(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::DegenerateConditioning, "funclasses", "no conditioning values");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo))
    throw Error(ErrorCode::DegenerateConditioning, "funclasses", "conditioning variable is constant");
  std::vector<double> out(v.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - lo) / span, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// RKHS workspace and closed-form statistic
// ---------------------------------------------------------------------------

struct RkhsWorkspace {
  Eigen::MatrixXd phi;          // n x D centered basis evaluations
  Eigen::VectorXd gamma_diag;   // diagonal of Gamma, 1 / lambda_j
  Eigen::MatrixXd vmat;         // D x D empirical covariance of the basis
  Eigen::VectorXd u;            // n^-1 Phi^T phi*
  std::vector<double> v_scaled;

  std::size_t n() const noexcept { return static_cast<std::size_t>(phi.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(phi.cols()); }
};

inline RkhsWorkspace build_workspace(const ScoreSet& scores, std::size_t dim) {
  const std::size_t n = scores.n();
  if (n < 3) throw Error(ErrorCode::InvalidValue, "funclasses", "RKHS workspace needs n >= 3");
  if (scores.v.size() != n) throw Error(ErrorCode::LengthMismatch, "funclasses", "v and phi lengths differ");
  if (dim < 2 || dim % 2)
    throw Error(ErrorCode::InvalidConfig, "funclasses", "RKHS dimension must be even and >= 2");

  RkhsWorkspace ws;
  ws.v_scaled = scale_to_unit(scores.v);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(dim);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> raw(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) rkhs_basis_into(ws.v_scaled[i], dim, raw.row(i).data());
  ws.phi = raw;
  ws.phi.rowwise() -= ws.phi.colwise().mean();

  ws.gamma_diag.resize(cols);
  for (Eigen::Index j = 0; j < cols; ++j) ws.gamma_diag[j] = 1.0 / rkhs_eigenvalue(static_cast<std::size_t>(j));
  ws.vmat = (ws.phi.transpose() * ws.phi) / static_cast<double>(n);
  const Eigen::Map<const Eigen::VectorXd> phi_star(scores.phi.data(), rows);
  ws.u = ws.phi.transpose() * phi_star / static_cast<double>(n);
  return ws;
}

/// gamma Gamma + (1 - gamma) V.
inline Eigen::MatrixXd penalty_matrix(const RkhsWorkspace& ws, double gamma) {
  Eigen::MatrixXd m = (1.0 - gamma) * ws.vmat;
  m.diagonal() += gamma * ws.gamma_diag;
  return m;
}

enum class RidgePolicy { Throw, Fallback };

/// Factorization of the penalty matrix, reusable across any number of score
/// vectors. A ridge of 1e-10 tr(M)/D is added when the factorization fails
/// (always allowed for gamma > 0; for gamma = 0 only under RidgePolicy::Fallback).
class PenaltyFactor {
 public:
  PenaltyFactor(const RkhsWorkspace& ws, double gamma, double eta,
                RidgePolicy policy = RidgePolicy::Throw)
      : eta_(eta) {
    Eigen::MatrixXd m = penalty_matrix(ws, gamma);
    llt_.compute(m);
    bool ok = llt_.info() == Eigen::Success;
    if (ok && gamma == 0.0) {
      // V has rank at most n - 1 and often less than D; detect rank loss.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
      const double top = es.eigenvalues().maxCoeff();
      ok = es.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300);
    }
    if (!ok) {
      if (gamma == 0.0 && policy == RidgePolicy::Throw)
        throw Error(ErrorCode::SingularPenalty, "funclasses",
                    "gamma = 0 and V is rank deficient; add a ridge of 1e-10 I");
      const double ridge = 1e-10 * m.trace() / static_cast<double>(m.rows());
      m.diagonal().array() += ridge;
      llt_.compute(m);
      if (llt_.info() != Eigen::Success)
        throw Error(ErrorCode::SingularPenalty, "funclasses", "penalty matrix not positive definite");
      ridged_ = true;
    }
  }

  /// a_hat = M^-1 z / eta for z = sqrt(n) U.
  Eigen::VectorXd maximizer(const Eigen::VectorXd& z) const { return llt_.solve(z) / eta_; }

  /// eta^-1 z' M^-1 z.
  double statistic(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd half = llt_.matrixL().solve(z);
    return half.squaredNorm() / eta_;
  }

  bool ridged() const noexcept { return ridged_; }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double eta_;
  bool ridged_ = false;
};

struct RkhsStat {
  double statistic = 0.0;
  Eigen::VectorXd a_hat;
};

/// T = eta^-1 (sqrt n U)' M^-1 (sqrt n U), a_hat = sqrt n eta^-1 M^-1 U.
inline RkhsStat rkhs_stat(const RkhsWorkspace& ws, double gamma, double eta,
                          RidgePolicy policy = RidgePolicy::Throw) {
  const auto r = make_rkhs(ws.dim(), gamma, eta);
  const PenaltyFactor factor(ws, r.gamma, r.eta, policy);
  const Eigen::VectorXd z = std::sqrt(static_cast<double>(ws.n())) * ws.u;
  RkhsStat out;
  out.a_hat = factor.maximizer(z);
  out.statistic = std::max(0.0, z.dot(out.a_hat));
  return out;
}

/// Joint diagonalization of Gamma and V for a whole gamma grid: with
/// S = Gamma^-1/2 V Gamma^-1/2 = Q diag(s) Q',
///   z' M_gamma^-1 z = sum_k w_k^2 / (gamma + (1 - gamma) s_k),  w = Q' Gamma^-1/2 z.
/// One D x D transform per score vector then serves every gamma > 0.
class RkhsSpectrum {
 public:
  explicit RkhsSpectrum(const RkhsWorkspace& ws) {
    const Eigen::VectorXd scale = ws.gamma_diag.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd s = scale.asDiagonal() * ws.vmat * scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    eigenvalues_ = es.eigenvalues().cwiseMax(0.0);
    transform_ = es.eigenvectors().transpose() * scale.asDiagonal();
  }

  Eigen::VectorXd rotate(const Eigen::VectorXd& z) const { return transform_ * z; }

  /// Requires gamma > 0.
  double statistic(const Eigen::VectorXd& rotated, double gamma, double eta) const {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < rotated.size(); ++k)
      acc += rotated[k] * rotated[k] / (gamma + (1.0 - gamma) * eigenvalues_[k]);
    return acc / eta;
  }

 private:
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd transform_;
};

// ---------------------------------------------------------------------------
// Thresholded indicators
// ---------------------------------------------------------------------------

/// Precomputed ordering of V for sup over thresholds {1{v <= v0}: v0 in V}.
class IndicatorEvaluator {
 public:
  explicit IndicatorEvaluator(std::span<const double> v) : v_(v.begin(), v.end()), order_(v.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return v_[a] < v_[b]; });
  }

  struct Result {
    double statistic = 0.0;
    double threshold = 0.0;
  };

  /// max over thresholds of |n^-1/2 sum_i w_i (1{V_i <= v0} - F_n(v0))|,
  /// scanning V in ascending order with prefix sums. Ties in V are one
  /// threshold; the smallest maximizing threshold is reported.
  Result evaluate(std::span<const double> w) const {
    const std::size_t n = order_.size();
    double total = 0.0;
    for (double x : w) total += x;
    const double inv_n = 1.0 / static_cast<double>(n);
    Result best{0.0, v_.empty() ? 0.0 : v_[order_.front()]};
    double best_abs = -1.0;
    double prefix = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      prefix += w[order_[r]];
      if (r + 1 < n && v_[order_[r + 1]] == v_[order_[r]]) continue;
      const double count = static_cast<double>(r + 1);
      const double value = std::abs(prefix - total * count * inv_n);
      if (value > best_abs) {
        best_abs = value;
        best.threshold = v_[order_[r]];
      }
    }
    best.statistic = best_abs * std::sqrt(inv_n);
    return best;
  }

 private:
  std::vector<double> v_;
  std::vector<std::size_t> order_;
};

struct IndicatorStat {
  double statistic = 0.0;
  double threshold = 0.0;
};

inline IndicatorStat indicator_stat(const ScoreSet& scores) {
  if (scores.n() < 2) throw Error(ErrorCode::InvalidValue, "funclasses", "indicator statistic needs n >= 2");
  const ScoreSet centered = center_scores(scores);
  const auto r = IndicatorEvaluator(centered.v).evaluate(centered.phi);
  return {r.statistic, r.threshold};
}

// ---------------------------------------------------------------------------
// Bank of classes evaluated on a shared weighted score vector
// ---------------------------------------------------------------------------

/// All function classes of one test, prepared once per dataset. evaluate(w)
/// returns sup_h |n^-1/2 sum_i w_i h^c(V_i)| (or the RKHS quadratic form) for
/// every class, where w is the centered score vector, optionally multiplied
/// elementwise by bootstrap weights.
class ClassBank {
 public:
  ClassBank(const ScoreSet& centered, std::vector<FunctionClassSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw Error(ErrorCode::InvalidConfig, "funclasses", "no function classes");
    n_ = centered.n();
    for (std::size_t c = 0; c < specs_.size(); ++c) {
      if (std::holds_alternative<IndicatorClass>(specs_[c])) {
        if (!indicator_) indicator_.emplace(centered.v);
        slots_.push_back({Kind::Indicator, 0, 0});
        continue;
      }
      const RkhsClass r = make_rkhs(std::get<RkhsClass>(specs_[c]).dim, std::get<RkhsClass>(specs_[c]).gamma,
                                    std::get<RkhsClass>(specs_[c]).eta);
      specs_[c] = r;
      std::size_t g = 0;
      while (g < groups_.size() && groups_[g].dim != r.dim) ++g;
      if (g == groups_.size()) {
        Group grp;
        grp.dim = r.dim;
        grp.ws = build_workspace(centered, r.dim);
        groups_.push_back(std::move(grp));
      }
      Group& grp = groups_[g];
      if (r.gamma > 0.0) {
        if (!grp.spectrum) grp.spectrum.emplace(grp.ws);
        slots_.push_back({Kind::Spectral, g, 0});
      } else {
        grp.factors.emplace_back(grp.ws, r.gamma, r.eta, RidgePolicy::Fallback);
        slots_.push_back({Kind::Factored, g, grp.factors.size() - 1});
      }
    }
  }

  std::size_t size() const noexcept { return specs_.size(); }
  std::size_t n() const noexcept { return n_; }
  const std::vector<FunctionClassSpec>& specs() const noexcept { return specs_; }
  const RkhsWorkspace* workspace(std::size_t dim) const {
    for (const auto& g : groups_)
      if (g.dim == dim) return &g.ws;
    return nullptr;
  }

  std::vector<double> evaluate(std::span<const double> w) const {
    if (w.size() != n_) throw Error(ErrorCode::LengthMismatch, "funclasses", "weight vector length != n");
    std::vector<double> out(specs_.size());
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(n_));
    const double root_n = std::sqrt(static_cast<double>(n_));

    std::vector<Eigen::VectorXd> z(groups_.size()), rotated(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      z[g].noalias() = groups_[g].ws.phi.transpose() * wv;
      z[g] *= root_n / static_cast<double>(n_);
      if (groups_[g].spectrum) rotated[g] = groups_[g].spectrum->rotate(z[g]);
    }
    std::optional<double> indicator_value;
    for (std::size_t c = 0; c < specs_.size(); ++c) {
      const Slot& s = slots_[c];
      switch (s.kind) {
        case Kind::Indicator:
          if (!indicator_value) indicator_value = indicator_->evaluate(w).statistic;
          out[c] = *indicator_value;
          break;
        case Kind::Spectral: {
          const auto& r = std::get<RkhsClass>(specs_[c]);
          out[c] = groups_[s.group].spectrum->statistic(rotated[s.group], r.gamma, r.eta);
          break;
        }
        case Kind::Factored:
          out[c] = groups_[s.group].factors[s.factor].statistic(z[s.group]);
          break;
      }
    }
    return out;
  }

 private:
  enum class Kind { Indicator, Spectral, Factored };
  struct Slot {
    Kind kind;
    std::size_t group;
    std::size_t factor;
  };
  struct Group {
    std::size_t dim = 0;
    RkhsWorkspace ws;
    std::optional<RkhsSpectrum> spectrum;
    std::vector<PenaltyFactor> factors;
  };

  std::vector<FunctionClassSpec> specs_;
  std::size_t n_ = 0;
  std::optional<IndicatorEvaluator> indicator_;
  std::vector<Group> groups_;
  std::vector<Slot> slots_;
};

/// One bootstrap statistic: the class sup with centered phi replaced by xi * phi.
inline double bootstrap_linear_form(const ScoreSet& scores, const FunctionClassSpec& spec,
                                    std::span<const double> xi) {
  if (xi.size() != scores.n())
    throw Error(ErrorCode::LengthMismatch, "funclasses", "multiplier length != n");
  const ScoreSet centered = center_scores(scores);
  const ClassBank bank(centered, {spec});
  std::vector<double> w(xi.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = xi[i] * centered.phi[i];
  return bank.evaluate(w).front();
}

}  // namespace fvtest
