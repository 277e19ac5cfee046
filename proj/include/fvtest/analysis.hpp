#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fvtest/boot.hpp"
#include "fvtest/combine.hpp"
#include "fvtest/funclasses.hpp"

namespace fvtest {

/// The five tests compared in the simulation studies.
enum class Method { Indicator, FixedRkhs, CombinedRkhs, Aggregate, Cauchy };

inline constexpr std::array<Method, 5> kAllMethods{Method::Indicator, Method::FixedRkhs, Method::CombinedRkhs,
                                                   Method::Aggregate, Method::Cauchy};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Indicator: return "Indicator";
    case Method::FixedRkhs: return "FixedRKHS";
    case Method::CombinedRkhs: return "CombinedRKHS";
    case Method::Aggregate: return "Aggregate";
    case Method::Cauchy: return "Cauchy";
  }
  return "Unknown";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (s == to_string(m)) return m;
  if (s == "indicator") return Method::Indicator;
  if (s == "fixed_rkhs" || s == "fixedrkhs") return Method::FixedRkhs;
  if (s == "combined_rkhs" || s == "combinedrkhs") return Method::CombinedRkhs;
  if (s == "aggregate") return Method::Aggregate;
  if (s == "cauchy") return Method::Cauchy;
  throw Error(ErrorCode::InvalidConfig, "analysis", "unknown method '" + std::string(s) + "'");
}

struct AnalysisConfig {
  std::size_t dim = 100;
  std::size_t grid_size = 50;
  double gamma_min = 1e-5;
  double gamma_max = 1e-3;
  double eta = 1.0;
  MultiplierKind multiplier = MultiplierKind::Rademacher;
  std::size_t replicates = 800;
};

/// Column layout of the joint StatMatrix:
///   0            indicator
///   1 .. K       RKHS classes on the gamma grid (descending gamma)
///   K + 1        RKHS with gamma = 1 (smoothness penalty only)
inline std::vector<FunctionClassSpec> analysis_classes(const AnalysisConfig& cfg) {
  std::vector<FunctionClassSpec> specs{IndicatorClass{}};
  for (double g : gamma_grid(cfg.grid_size, cfg.gamma_min, cfg.gamma_max))
    specs.emplace_back(make_rkhs(cfg.dim, g, cfg.eta));
  specs.emplace_back(make_rkhs(cfg.dim, 1.0, cfg.eta));
  return specs;
}

struct AnalysisResult {
  StatMatrix stats;
  AggregateResult aggregate;      // indicator + gamma grid
  AggregateResult combined_rkhs;  // gamma grid only
  std::array<double, 5> p_values{};  // indexed like kAllMethods

  double p(Method m) const { return p_values[static_cast<std::size_t>(m)]; }
};

/// Everything the comparison needs from one joint bootstrap.
inline AnalysisResult analyze(const ScoreSet& scores, const AnalysisConfig& cfg, std::uint64_t seed,
                              std::size_t workers = 1) {
  MultiplierConfig mc{cfg.multiplier, cfg.replicates, seed};
  AnalysisResult r;
  r.stats = bootstrap_stat_matrix(scores, analysis_classes(cfg), mc, workers);
  const std::size_t k = cfg.grid_size;

  std::vector<std::size_t> agg_cols(k + 1), rkhs_cols(k);
  for (std::size_t c = 0; c <= k; ++c) agg_cols[c] = c;
  for (std::size_t c = 0; c < k; ++c) rkhs_cols[c] = c + 1;
  r.aggregate = aggregate_test(select_columns(r.stats, agg_cols));
  r.combined_rkhs = aggregate_test(select_columns(r.stats, rkhs_cols));

  const auto counts = exceedance_counts(r.stats);
  const std::size_t b = r.stats.replicates();
  r.p_values[static_cast<std::size_t>(Method::Indicator)] =
      p_value_convention(counts[0], b, PValueConvention::PlusOne);
  r.p_values[static_cast<std::size_t>(Method::FixedRkhs)] =
      p_value_convention(counts[k + 1], b, PValueConvention::PlusOne);
  r.p_values[static_cast<std::size_t>(Method::CombinedRkhs)] = r.combined_rkhs.p_aggregate;
  r.p_values[static_cast<std::size_t>(Method::Aggregate)] = r.aggregate.p_aggregate;
  r.p_values[static_cast<std::size_t>(Method::Cauchy)] = r.aggregate.p_cauchy;
  return r;
}

}  // namespace fvtest
