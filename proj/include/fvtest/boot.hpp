#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "fvtest/combine.hpp"
#include "fvtest/error.hpp"
#include "fvtest/estimands.hpp"
#include "fvtest/funclasses.hpp"
#include "fvtest/rng.hpp"

namespace fvtest {

enum class MultiplierKind { Rademacher, StandardNormal };

inline std::string_view to_string(MultiplierKind k) {
  return k == MultiplierKind::Rademacher ? "rademacher" : "standard_normal";
}

inline MultiplierKind parse_multiplier(std::string_view s) {
  if (s == "rademacher") return MultiplierKind::Rademacher;
  if (s == "standard_normal" || s == "normal" || s == "gaussian") return MultiplierKind::StandardNormal;
  throw Error(ErrorCode::InvalidConfig, "boot", "unknown multiplier '" + std::string(s) + "'");
}

struct MultiplierConfig {
  MultiplierKind kind = MultiplierKind::Rademacher;
  std::size_t replicates = 800;
  std::uint64_t seed = 0;
};

/// Multipliers for replicate b, a pure function of (seed, b, n).
inline std::vector<double> draw_multipliers(std::size_t n, const MultiplierConfig& cfg, std::size_t b) {
  Engine eng = make_engine(cfg.seed, {static_cast<std::uint64_t>(b)});
  std::vector<double> xi(n);
  if (cfg.kind == MultiplierKind::Rademacher) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) bits = eng();
      xi[i] = (bits & 1U) ? 1.0 : -1.0;
      bits >>= 1;
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : xi) x = normal(eng);
  }
  return xi;
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled exactly once; callers write results into slots keyed by i.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Observed statistics (row 0) and B multiplier-bootstrap rows for every
/// class, all classes of row b sharing the multipliers of replicate b.
inline StatMatrix bootstrap_stat_matrix(const ScoreSet& scores, const std::vector<FunctionClassSpec>& specs,
                                        const MultiplierConfig& cfg, std::size_t workers = 1) {
  if (cfg.replicates < 1) throw Error(ErrorCode::InvalidConfig, "boot", "B must be >= 1");
  const ScoreSet centered = center_scores(scores);
  const ClassBank bank(centered, specs);
  const std::size_t n = centered.n();

  StatMatrix t;
  t.class_specs = bank.specs();
  t.values.resize(static_cast<Eigen::Index>(cfg.replicates + 1), static_cast<Eigen::Index>(specs.size()));
  auto store = [&](std::size_t row, const std::vector<double>& stats) {
    for (std::size_t c = 0; c < stats.size(); ++c)
      t.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = stats[c];
  };
  store(0, bank.evaluate(centered.phi));
  parallel_for(cfg.replicates, workers, [&](std::size_t b) {
    const auto xi = draw_multipliers(n, cfg, b + 1);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = xi[i] * centered.phi[i];
    store(b + 1, bank.evaluate(w));
  });
  return t;
}

struct TestResult {
  double statistic = 0.0;
  std::vector<double> boot_stats;
  double p_value = 1.0;            // count / B with strict exceedance
  double p_value_plus_one = 1.0;   // (1 + count) / (B + 1)
  FunctionClassSpec class_spec;
  std::uint64_t seed = 0;
  std::optional<double> threshold;       // indicator argmax
  std::optional<Eigen::VectorXd> a_hat;  // RKHS maximizer
  bool degenerate_scores = false;        // every centered phi is zero
};

/// p-values of one column of a StatMatrix.
inline TestResult column_result(const StatMatrix& t, std::size_t column) {
  TestResult r;
  const auto col = static_cast<Eigen::Index>(column);
  r.statistic = t.values(0, col);
  r.boot_stats.resize(t.replicates());
  std::size_t count = 0;
  for (std::size_t b = 0; b < t.replicates(); ++b) {
    r.boot_stats[b] = t.values(static_cast<Eigen::Index>(b + 1), col);
    count += r.boot_stats[b] > r.statistic;
  }
  r.p_value = p_value_convention(count, t.replicates(), PValueConvention::Count);
  r.p_value_plus_one = p_value_convention(count, t.replicates(), PValueConvention::PlusOne);
  if (column < t.class_specs.size()) r.class_spec = t.class_specs[column];
  return r;
}

/// Argmax diagnostics for the observed statistic of one class.
inline void attach_argmax(TestResult& r, const ScoreSet& centered, const ClassBank& bank) {
  if (std::holds_alternative<IndicatorClass>(r.class_spec)) {
    r.threshold = IndicatorEvaluator(centered.v).evaluate(centered.phi).threshold;
  } else {
    const auto& spec = std::get<RkhsClass>(r.class_spec);
    if (const RkhsWorkspace* ws = bank.workspace(spec.dim))
      r.a_hat = rkhs_stat(*ws, spec.gamma, spec.eta, RidgePolicy::Fallback).a_hat;
  }
}

/// Multiplier-bootstrap calibration of a single function class.
inline TestResult run_test(const ScoreSet& scores, const FunctionClassSpec& spec, const MultiplierConfig& cfg,
                           std::size_t workers = 1) {
  const StatMatrix t = bootstrap_stat_matrix(scores, {spec}, cfg, workers);
  TestResult r = column_result(t, 0);
  r.seed = cfg.seed;
  const ScoreSet centered = center_scores(scores);
  r.degenerate_scores = std::all_of(centered.phi.begin(), centered.phi.end(), [](double x) { return x == 0.0; });
  attach_argmax(r, centered, ClassBank(centered, {r.class_spec}));
  return r;
}

}  // namespace fvtest
