#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fvtest/error.hpp"
#include "fvtest/funclasses.hpp"

namespace fvtest {

/// Row 0 holds the observed statistics, rows 1..B the bootstrap statistics;
/// one column per function class. Every column of row b must come from the
/// same multiplier draw.
struct StatMatrix {
  Eigen::MatrixXd values;
  std::vector<FunctionClassSpec> class_specs;

  std::size_t replicates() const noexcept { return values.rows() > 0 ? static_cast<std::size_t>(values.rows()) - 1 : 0; }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

inline StatMatrix select_columns(const StatMatrix& t, std::span<const std::size_t> columns) {
  StatMatrix out;
  out.values.resize(t.values.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out.values.col(static_cast<Eigen::Index>(c)) = t.values.col(static_cast<Eigen::Index>(columns[c]));
    if (columns[c] < t.class_specs.size()) out.class_specs.push_back(t.class_specs[columns[c]]);
  }
  return out;
}

enum class PValueConvention { Count, PlusOne };

/// Count: count / B.  PlusOne: (1 + count) / (B + 1).
inline double p_value_convention(std::size_t count_exceed, std::size_t replicates, PValueConvention conv) {
  if (replicates == 0 || count_exceed > replicates)
    throw Error(ErrorCode::InvalidValue, "boot", "need 0 <= count <= B and B >= 1");
  const double c = static_cast<double>(count_exceed), b = static_cast<double>(replicates);
  return conv == PValueConvention::Count ? c / b : (1.0 + c) / (b + 1.0);
}

inline double sigma_floor(double mu) { return 1e-12 * (1.0 + std::abs(mu)); }

struct Moments {
  std::vector<double> mu;
  std::vector<double> sigma;
};

inline void check_stat_matrix(const StatMatrix& t) {
  if (t.values.rows() < 3)
    throw Error(ErrorCode::InsufficientBootstrap, "combine", "need B >= 2 bootstrap rows");
  if (t.values.cols() < 1) throw Error(ErrorCode::EmptyInput, "combine", "no function classes");
  if (!t.values.allFinite()) throw Error(ErrorCode::InvalidValue, "combine", "non-finite statistic");
}

/// Column means and standard deviations over all rows except row b
/// (divisors B and B - 1), sigma floored at 1e-12 (1 + |mu|).
inline Moments leave_one_out_moments(const StatMatrix& t, std::size_t b) {
  check_stat_matrix(t);
  const Eigen::Index rows = t.values.rows();
  if (b >= static_cast<std::size_t>(rows)) throw Error(ErrorCode::InvalidValue, "combine", "row index out of range");
  const double count = static_cast<double>(rows - 1);
  Moments m;
  for (Eigen::Index l = 0; l < t.values.cols(); ++l) {
    double mu = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r)
      if (r != static_cast<Eigen::Index>(b)) mu += t.values(r, l);
    mu /= count;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r)
      if (r != static_cast<Eigen::Index>(b)) ss += (t.values(r, l) - mu) * (t.values(r, l) - mu);
    m.mu.push_back(mu);
    m.sigma.push_back(std::max(std::sqrt(ss / (count - 1.0)), sigma_floor(mu)));
  }
  return m;
}

struct AggregateResult {
  double q0 = 0.0;
  std::vector<double> qb;
  double p_aggregate = 1.0;
  std::vector<double> per_class_p;  // plus-one convention, strict exceedance
  double p_cauchy = 1.0;
};

/// Exceedance count #{b >= 1 : T[b, l] > T[0, l]} for each column.
inline std::vector<std::size_t> exceedance_counts(const StatMatrix& t) {
  std::vector<std::size_t> out(t.classes(), 0);
  for (Eigen::Index l = 0; l < t.values.cols(); ++l)
    for (Eigen::Index r = 1; r < t.values.rows(); ++r)
      out[static_cast<std::size_t>(l)] += t.values(r, l) > t.values(0, l);
  return out;
}

/// Weighted Cauchy combination: S = sum w_i tan((1/2 - p_i) pi),
/// p = 1/2 - atan(S)/pi, inputs clipped to [1e-10, 1 - 1e-10].
inline double cauchy_combine(std::span<const double> p, std::optional<std::span<const double>> weights = {}) {
  if (p.empty()) throw Error(ErrorCode::EmptyInput, "combine", "no p-values to combine");
  if (weights && weights->size() != p.size())
    throw Error(ErrorCode::LengthMismatch, "combine", "weights and p-values differ in length");
  const double equal = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::clamp(p[i], 1e-10, 1.0 - 1e-10);
    s += (weights ? (*weights)[i] : equal) * std::tan((0.5 - pi) * std::numbers::pi);
  }
  return 0.5 - std::atan(s) / std::numbers::pi;
}

/// Exchangeable Monte Carlo aggregate over the L columns: each row is
/// standardized by the moments of all other rows, summarized by the mean
/// square, and P = (1 + #{b : Q_b >= Q_0}) / (B + 1).
inline AggregateResult aggregate_test(const StatMatrix& t) {
  check_stat_matrix(t);
  const Eigen::Index rows = t.values.rows();
  const Eigen::Index cols = t.values.cols();
  const double total = static_cast<double>(rows);
  const double loo_count = total - 1.0;

  // Leave-one-out moments from full-sample deviations:
  //   mu_-b = m - d_b / (N - 1),  SS_-b = SS - d_b^2 N / (N - 1).
  // When SS_-b loses most of SS to cancellation the column is recomputed directly.
  std::vector<double> means(static_cast<std::size_t>(cols)), ss(static_cast<std::size_t>(cols));
  for (Eigen::Index l = 0; l < cols; ++l) {
    const double m = t.values.col(l).mean();
    means[l] = m;
    ss[l] = (t.values.col(l).array() - m).square().sum();
  }

  std::vector<double> q(static_cast<std::size_t>(rows), 0.0);
  for (Eigen::Index b = 0; b < rows; ++b) {
    double acc = 0.0;
    for (Eigen::Index l = 0; l < cols; ++l) {
      const double d = t.values(b, l) - means[l];
      double mu = means[l] - d / loo_count;
      double ss_loo = ss[l] - d * d * total / loo_count;
      if (!(ss_loo > 1e-8 * ss[l])) {
        mu = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r)
          if (r != b) mu += t.values(r, l);
        mu /= loo_count;
        ss_loo = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r)
          if (r != b) ss_loo += (t.values(r, l) - mu) * (t.values(r, l) - mu);
      }
      const double sigma = std::max(std::sqrt(ss_loo / (loo_count - 1.0)), sigma_floor(mu));
      const double z = (t.values(b, l) - mu) / sigma;
      acc += z * z;
    }
    q[static_cast<std::size_t>(b)] = acc / static_cast<double>(cols);
  }

  AggregateResult res;
  res.q0 = q.front();
  res.qb.assign(q.begin() + 1, q.end());
  std::size_t at_least = 0;
  for (double qb : res.qb) at_least += qb >= res.q0;
  res.p_aggregate = p_value_convention(at_least, res.qb.size(), PValueConvention::PlusOne);
  const auto counts = exceedance_counts(t);
  for (std::size_t c : counts)
    res.per_class_p.push_back(p_value_convention(c, t.replicates(), PValueConvention::PlusOne));
  res.p_cauchy = cauchy_combine(res.per_class_p);
  return res;
}

}  // namespace fvtest
