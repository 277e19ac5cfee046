#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fvtest/datamodel.hpp"
#include "fvtest/error.hpp"
#include "fvtest/nuisance.hpp"

namespace fvtest {

/// Per-observation influence components for one function-valued parameter.
///
/// phi[i] = D^v(O_i) - mean_k psi(V_k) + psi(V_i): the bracket of the one-step
/// estimator, so that Omega_os(h) = n^-1 sum_i phi[i] (h(V_i) - mean h).
struct ScoreSet {
  std::vector<double> v;      // conditioning values (projected to one component)
  std::vector<double> phi;
  std::vector<double> psi_v;  // fitted function-valued parameter at V_i (diagnostic)
  double theta_hat = 0.0;

  std::size_t n() const noexcept { return phi.size(); }
};

struct EstimandConfig {
  Estimand estimand = Estimand::CondMean;
  SmoothOptions smooth;
  PropensityOptions propensity;
  std::size_t conditioning_index = 0;
  bool clip_propensity = true;
};

/// Omega_os(h) for a vector of h(V_i) values.
inline double one_step_estimate(const ScoreSet& s, std::span<const double> h) {
  if (h.size() != s.n()) throw Error(ErrorCode::LengthMismatch, "estimands", "h length != n");
  double h_bar = 0.0;
  for (double x : h) h_bar += x;
  h_bar /= static_cast<double>(h.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) acc += s.phi[i] * (h[i] - h_bar);
  return acc / static_cast<double>(h.size());
}

/// phi - mean(phi). Vectors whose mean is already within 1e-13 max|phi| of
/// zero are returned untouched, which makes centering idempotent bit-for-bit.
inline ScoreSet center_scores(ScoreSet s) {
  if (s.phi.empty()) return s;
  for (int pass = 0; pass < 3; ++pass) {
    double mean = 0.0, max_abs = 0.0;
    for (double x : s.phi) {
      mean += x;
      max_abs = std::max(max_abs, std::abs(x));
    }
    mean /= static_cast<double>(s.phi.size());
    if (std::abs(mean) <= 1e-13 * max_abs) break;
    for (double& x : s.phi) x -= mean;
  }
  return s;
}

namespace estimand_detail {

inline double mean_of(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  return m / static_cast<double>(x.size());
}

/// Spline fit of target on v reported as psi_v. Falls back to the constant
/// mean when there is too little data for a spline.
inline std::vector<double> diagnostic_fit(std::span<const double> v, std::span<const double> target,
                                          const SmoothOptions& opt) {
  const std::size_t n = v.size();
  const std::size_t knots = opt.num_knots ? opt.num_knots : default_num_knots(n);
  if (n >= std::max<std::size_t>(4, knots)) {
    try {
      return predict(fit_spline_auto(v, target, opt), v);
    } catch (const Error&) {
    }
  }
  return std::vector<double>(n, mean_of(target));
}

inline std::vector<double> projected_conditioning(const Dataset& ds, std::size_t index) {
  if (ds.n() == 0 || index >= ds.observations.front().conditioning.size())
    throw Error(ErrorCode::InvalidConfig, "estimands",
                "conditioning index " + std::to_string(index) + " out of range");
  return ds.conditioning_column(index);
}

inline void require(const Dataset& ds, Estimand e) {
  validate(ds);
  if (ds.estimand != e)
    throw Error(ErrorCode::RoleMismatch, "estimands",
                "dataset is tagged " + std::string(to_string(ds.estimand)) + ", expected " +
                    std::string(to_string(e)));
}

}  // namespace estimand_detail

/// Covariate columns used for outcome/propensity regressions: the covariates
/// when present, otherwise the conditioning variables.
inline std::vector<std::vector<double>> adjustment_columns(const Dataset& ds) {
  const Observation& first = ds.observations.front();
  const std::size_t d = first.covariates ? first.covariates->size() : first.conditioning.size();
  std::vector<std::vector<double>> cols(d, std::vector<double>(ds.n()));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto& o = ds.observations[i];
    const auto& src = o.covariates ? *o.covariates : o.conditioning;
    for (std::size_t j = 0; j < d; ++j) cols[j][i] = src[j];
  }
  return cols;
}

inline std::vector<std::vector<double>> conditioning_columns(const Dataset& ds) {
  const std::size_t d = ds.observations.front().conditioning.size();
  std::vector<std::vector<double>> cols(d, std::vector<double>(ds.n()));
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t j = 0; j < d; ++j) cols[j][i] = ds.observations[i].conditioning[j];
  return cols;
}

inline std::vector<double> row_of(const std::vector<std::vector<double>>& cols, std::size_t i) {
  std::vector<double> r(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) r[j] = cols[j][i];
  return r;
}

/// Conditional mean: phi_i = Y_i - mean(Y). No nuisance enters phi.
inline ScoreSet scores_condmean(const Dataset& ds, const EstimandConfig& cfg = {}) {
  estimand_detail::require(ds, Estimand::CondMean);
  ScoreSet s;
  s.v = estimand_detail::projected_conditioning(ds, cfg.conditioning_index);
  const auto y = ds.outcomes();
  s.theta_hat = estimand_detail::mean_of(y);
  s.phi.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s.phi[i] = y[i] - s.theta_hat;
  s.psi_v = estimand_detail::diagnostic_fit(s.v, y, cfg.smooth);
  return s;
}

/// CATE: the AIPW terms
///   phi_i = mu1(X_i) - mu0(X_i) + alpha(T_i, X_i) (Y_i - mu_{T_i}(X_i)),
///   alpha(t, x) = t / pi(x) - (1 - t) / (1 - pi(x)).
template <class OutcomeModel>
ScoreSet scores_cate(const Dataset& ds, const OutcomeModel& mu1, const OutcomeModel& mu0,
                     const PropensityModel& pi, const EstimandConfig& cfg = {}) {
  estimand_detail::require(ds, Estimand::Cate);
  ScoreSet s;
  s.v = estimand_detail::projected_conditioning(ds, cfg.conditioning_index);
  const auto cols = adjustment_columns(ds);
  const std::size_t n = ds.n();
  s.phi.resize(n);
  std::vector<double> contrast(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = ds.observations[i];
    const auto x = row_of(cols, i);
    const double m1 = mu1(x), m0 = mu0(x);
    double p = cfg.clip_propensity ? pi(x) : pi.raw(x);
    if (!cfg.clip_propensity && !(p > 0.0 && p < 1.0))
      throw Error(ErrorCode::PositivityViolation, "estimands",
                  "row " + std::to_string(i) + ": propensity " + std::to_string(p) + " outside (0, 1)");
    const int t = *o.treatment;
    const double alpha = t == 1 ? 1.0 / p : -1.0 / (1.0 - p);
    const double resid = o.outcome - (t == 1 ? m1 : m0);
    contrast[i] = m1 - m0;
    s.phi[i] = contrast[i] + alpha * resid;
  }
  s.theta_hat = estimand_detail::mean_of(s.phi);
  s.psi_v = estimand_detail::diagnostic_fit(s.v, contrast, cfg.smooth);
  return s;
}

/// Conditional covariance: phi_i = (Y_i - mu_y(Z_i)) (X_i - mu_x(Z_i)), where X
/// is the secondary outcome and Z the conditioning vector.
template <class OutcomeModel>
ScoreSet scores_condcov(const Dataset& ds, const OutcomeModel& mu_y, const OutcomeModel& mu_x,
                        const EstimandConfig& cfg = {}) {
  estimand_detail::require(ds, Estimand::CondCov);
  ScoreSet s;
  s.v = estimand_detail::projected_conditioning(ds, cfg.conditioning_index);
  const std::size_t n = ds.n();
  s.phi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = ds.observations[i];
    const std::span<const double> z(o.conditioning);
    s.phi[i] = (o.outcome - mu_y(z)) * (*o.secondary_outcome - mu_x(z));
  }
  s.theta_hat = estimand_detail::mean_of(s.phi);
  s.psi_v = estimand_detail::diagnostic_fit(s.v, s.phi, cfg.smooth);
  return s;
}

/// Fits the nuisances the estimand needs and returns its ScoreSet.
inline ScoreSet compute_scores(const Dataset& ds, const EstimandConfig& cfg) {
  if (ds.estimand != cfg.estimand)
    throw Error(ErrorCode::RoleMismatch, "estimands", "dataset estimand differs from configuration");
  switch (cfg.estimand) {
    case Estimand::CondMean:
      return scores_condmean(ds, cfg);
    case Estimand::Cate: {
      validate(ds);
      const auto cols = adjustment_columns(ds);
      std::vector<std::vector<double>> c1(cols.size()), c0(cols.size());
      std::vector<double> y1, y0;
      std::vector<int> t(ds.n());
      for (std::size_t i = 0; i < ds.n(); ++i) {
        const auto& o = ds.observations[i];
        t[i] = *o.treatment;
        auto& dst = t[i] == 1 ? c1 : c0;
        for (std::size_t j = 0; j < cols.size(); ++j) dst[j].push_back(cols[j][i]);
        (t[i] == 1 ? y1 : y0).push_back(o.outcome);
      }
      if (y1.size() < 4 || y0.size() < 4)
        throw Error(ErrorCode::PositivityViolation, "estimands",
                    "each treatment arm needs at least 4 observations");
      const AdditiveFit mu1 = fit_additive(c1, y1, cfg.smooth);
      const AdditiveFit mu0 = fit_additive(c0, y0, cfg.smooth);
      const PropensityModel pi = fit_propensity(cols, t, cfg.propensity);
      return scores_cate(ds, mu1, mu0, pi, cfg);
    }
    case Estimand::CondCov: {
      validate(ds);
      const auto cols = conditioning_columns(ds);
      const auto y = ds.outcomes();
      std::vector<double> x(ds.n());
      for (std::size_t i = 0; i < ds.n(); ++i) x[i] = *ds.observations[i].secondary_outcome;
      const AdditiveFit mu_y = fit_additive(cols, y, cfg.smooth);
      const AdditiveFit mu_x = fit_additive(cols, x, cfg.smooth);
      return scores_condcov(ds, mu_y, mu_x, cfg);
    }
  }
  throw Error(ErrorCode::InvalidConfig, "estimands", "unknown estimand");
}

}  // namespace fvtest
