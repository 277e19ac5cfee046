#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fvtest/analysis.hpp"
#include "fvtest/csv.hpp"
#include "fvtest/datamodel.hpp"
#include "fvtest/estimands.hpp"
#include "fvtest/rng.hpp"

namespace fvtest {

/// Coefficients of the treatment-effect DGP (no published values;
/// these defaults are ours and are echoed in every output row).
struct Example2Coefficients {
  double beta0 = 0.0;
  double beta1 = 1.0;
  double gamma0 = 1.0;  // the constant effect in setting 1
  double gamma1 = 1.0;
};

/// How the 0.5 in "N(0, 0.5)" is read for the treatment-effect DGP noise.
enum class NoiseScale { Variance, StandardDeviation };

/// Support of Z in conditional-covariance setting 3. Printed: Unif(0, 1),
/// which makes 1{Z > 0} almost surely 1. Symmetric: Unif(-1, 1).
enum class Example3ZRange { Printed, Symmetric };

struct DgpOptions {
  Example2Coefficients coefficients;
  NoiseScale noise = NoiseScale::Variance;
  Example3ZRange z_range = Example3ZRange::Printed;
};

struct DgpSpec {
  int example = 1;
  int setting = 1;
  std::size_t n = 500;
};

inline void check_dgp(const DgpSpec& d) {
  if (d.example < 1 || d.example > 3)
    throw Error(ErrorCode::InvalidConfig, "simlab", "example must be 1, 2 or 3");
  if (d.setting < 1 || d.setting > 3)
    throw Error(ErrorCode::InvalidConfig, "simlab", "setting must be 1, 2 or 3");
  if (d.n < 25) throw Error(ErrorCode::InvalidConfig, "simlab", "n must be >= 25");
}

/// X ~ Unif(-1, 1), eps ~ N(0, 1); Y = eps, 0.25 X + eps, or sin(pi X sign X) + eps.
inline Dataset gen_example1(int setting, std::size_t n, Engine& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.estimand = Estimand::CondMean;
  ds.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = unif(rng);
    const double eps = normal(rng);
    double y = eps;
    if (setting == 2) y = 0.25 * x + eps;
    if (setting == 3) y = std::sin(std::numbers::pi * x * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0))) + eps;
    Observation o;
    o.outcome = y;
    o.conditioning = {x};
    ds.observations.push_back(std::move(o));
  }
  return ds;
}

/// Randomized trial: W ~ Unif(-1, 1), T ~ Bernoulli(0.5), effect constant,
/// linear in W, or gamma0 + gamma1 sin(W).
inline Dataset gen_example2(int setting, std::size_t n, Engine& rng, const DgpOptions& opt = {}) {
  const auto& c = opt.coefficients;
  const double sd = opt.noise == NoiseScale::Variance ? std::sqrt(0.5) : 0.5;
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, sd);
  Dataset ds;
  ds.estimand = Estimand::Cate;
  ds.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = unif(rng);
    const int t = coin(rng) ? 1 : 0;
    const double eps = normal(rng);
    double effect = c.gamma0;
    if (setting == 2) effect = c.gamma0 + c.gamma1 * w;
    if (setting == 3) effect = c.gamma0 + c.gamma1 * std::sin(w);
    Observation o;
    o.outcome = c.beta0 + c.beta1 * w + effect * t + eps;
    o.conditioning = {w};
    o.treatment = t;
    o.covariates = std::vector<double>{w};
    ds.observations.push_back(std::move(o));
  }
  return ds;
}

inline double example3_rho(double z) {
  const double e = std::exp(z * z);
  return (e - 1.0) / (e + 1.0);
}

/// Conditional covariance DGPs; outcome Y, secondary outcome X, conditioning Z.
inline Dataset gen_example3(int setting, std::size_t n, Engine& rng, const DgpOptions& opt = {}) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.estimand = Estimand::CondCov;
  ds.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0.0, x = 0.0, z = 0.0;
    if (setting == 1) {
      y = normal(rng);
      x = normal(rng);
      z = sym(rng);
    } else if (setting == 2) {
      z = unit(rng);
      const double rho = example3_rho(z);
      const double e1 = normal(rng), e2 = normal(rng);
      y = e1;
      x = rho * e1 + std::sqrt(1.0 - rho * rho) * e2;
    } else {
      z = opt.z_range == Example3ZRange::Printed ? unit(rng) : sym(rng);
      x = normal(rng);
      y = 0.5 * x * (z > 0.0 ? 1.0 : 0.0) + normal(rng);
    }
    Observation o;
    o.outcome = y;
    o.secondary_outcome = x;
    o.conditioning = {z};
    ds.observations.push_back(std::move(o));
  }
  return ds;
}

inline Dataset generate(const DgpSpec& d, Engine& rng, const DgpOptions& opt = {}) {
  check_dgp(d);
  switch (d.example) {
    case 1: return gen_example1(d.setting, d.n, rng);
    case 2: return gen_example2(d.setting, d.n, rng, opt);
    default: return gen_example3(d.setting, d.n, rng, opt);
  }
}

/// Estimand configuration the simulations use for each example.
inline EstimandConfig estimand_config_for(int example) {
  EstimandConfig cfg;
  cfg.estimand = example == 1 ? Estimand::CondMean : example == 2 ? Estimand::Cate : Estimand::CondCov;
  if (example == 2) cfg.propensity.known = 0.5;
  return cfg;
}

inline std::string dgp_params(const DgpSpec& d, const DgpOptions& opt) {
  std::ostringstream out;
  if (d.example == 2) {
    const auto& c = opt.coefficients;
    out << "beta0=" << csv::format_double(c.beta0) << ";beta1=" << csv::format_double(c.beta1)
        << ";gamma0=" << csv::format_double(c.gamma0) << ";gamma1=" << csv::format_double(c.gamma1)
        << ";noise=" << (opt.noise == NoiseScale::Variance ? "var0.5" : "sd0.5");
  } else if (d.example == 3 && d.setting == 3) {
    out << "z_range=" << (opt.z_range == Example3ZRange::Printed ? "unif(0,1)" : "unif(-1,1)");
  } else {
    out << "none";
  }
  return out.str();
}

struct RejectionRow {
  Method method = Method::Indicator;
  int example = 1;
  int setting = 1;
  std::size_t n = 0;
  double alpha = 0.05;
  std::size_t n_reps = 0;
  double rejection_rate = 0.0;
  double mc_stderr = 0.0;
  double wall_time = 0.0;  // seconds of compute summed over the cell's replicates
  std::string dgp_params;
};

struct CellError {
  DgpSpec cell;
  std::string message;
};

struct RejectionTable {
  std::vector<RejectionRow> rows;
  std::vector<CellError> errors;
};

struct MonteCarloConfig {
  std::vector<DgpSpec> cells;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::size_t n_reps = 500;
  double alpha = 0.05;
  AnalysisConfig analysis;
  DgpOptions dgp;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;
};

/// Seeds of replicate `rep` of a cell, keyed by the cell's identity rather
/// than its position in the grid.
inline std::uint64_t replicate_seed(std::uint64_t master, const DgpSpec& d, std::size_t rep, std::uint64_t purpose) {
  return derive_seed(master, {static_cast<std::uint64_t>(d.example), static_cast<std::uint64_t>(d.setting),
                              static_cast<std::uint64_t>(d.n), static_cast<std::uint64_t>(rep), purpose});
}

/// p-values for every method on one simulated replicate.
inline std::array<double, 5> run_replicate(const DgpSpec& d, std::size_t rep, const MonteCarloConfig& cfg) {
  Engine rng(replicate_seed(cfg.master_seed, d, rep, 0));
  const Dataset ds = generate(d, rng, cfg.dgp);
  const ScoreSet scores = compute_scores(ds, estimand_config_for(d.example));
  return analyze(scores, cfg.analysis, replicate_seed(cfg.master_seed, d, rep, 1)).p_values;
}

/// Rejection rates for every (cell, method). Replicates run in parallel; the
/// result depends only on the configuration, never on the worker count.
inline RejectionTable monte_carlo(const MonteCarloConfig& cfg) {
  if (cfg.n_reps < 1) throw Error(ErrorCode::InvalidConfig, "simlab", "n_reps must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "simlab", "alpha must lie in (0, 1)");
  for (const auto& c : cfg.cells) check_dgp(c);

  struct Outcome {
    std::array<double, 5> p{};
    double seconds = 0.0;
    std::string error;
  };
  const std::size_t tasks = cfg.cells.size() * cfg.n_reps;
  std::vector<Outcome> outcomes(tasks);
  parallel_for(tasks, cfg.workers, [&](std::size_t task) {
    const std::size_t cell = task / cfg.n_reps, rep = task % cfg.n_reps;
    const auto start = std::chrono::steady_clock::now();
    try {
      outcomes[task].p = run_replicate(cfg.cells[cell], rep, cfg);
    } catch (const std::exception& e) {
      outcomes[task].error = e.what();
    }
    outcomes[task].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  RejectionTable table;
  for (std::size_t cell = 0; cell < cfg.cells.size(); ++cell) {
    const DgpSpec& d = cfg.cells[cell];
    std::string error;
    double seconds = 0.0;
    for (std::size_t rep = 0; rep < cfg.n_reps; ++rep) {
      const auto& o = outcomes[cell * cfg.n_reps + rep];
      seconds += o.seconds;
      if (error.empty() && !o.error.empty()) error = "replicate " + std::to_string(rep) + ": " + o.error;
    }
    if (!error.empty()) table.errors.push_back({d, error});
    for (Method m : cfg.methods) {
      RejectionRow row;
      row.method = m;
      row.example = d.example;
      row.setting = d.setting;
      row.n = d.n;
      row.alpha = cfg.alpha;
      row.n_reps = cfg.n_reps;
      row.wall_time = seconds;
      row.dgp_params = dgp_params(d, cfg.dgp);
      if (!error.empty()) {
        row.rejection_rate = std::numeric_limits<double>::quiet_NaN();
        row.mc_stderr = std::numeric_limits<double>::quiet_NaN();
      } else {
        std::size_t rejected = 0;
        for (std::size_t rep = 0; rep < cfg.n_reps; ++rep)
          rejected += outcomes[cell * cfg.n_reps + rep].p[static_cast<std::size_t>(m)] <= cfg.alpha;
        const double r = static_cast<double>(rejected) / static_cast<double>(cfg.n_reps);
        row.rejection_rate = r;
        row.mc_stderr = std::sqrt(r * (1.0 - r) / static_cast<double>(cfg.n_reps));
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

/// CSV rendering. Wall time is machine-dependent, so it is written only when
/// asked for; otherwise the column holds NA and the file is reproducible.
inline std::string to_csv(const RejectionTable& table, bool include_wall_time = false) {
  std::ostringstream out;
  out << "method,example,setting,n,alpha,n_reps,rejection_rate,mc_stderr,wall_time,dgp_params\n";
  for (const auto& r : table.rows) {
    out << to_string(r.method) << ',' << r.example << ',' << r.setting << ',' << r.n << ','
        << csv::format_double(r.alpha) << ',' << r.n_reps << ','
        << (std::isnan(r.rejection_rate) ? std::string("NA") : csv::format_double(r.rejection_rate)) << ','
        << (std::isnan(r.mc_stderr) ? std::string("NA") : csv::format_double(r.mc_stderr)) << ','
        << (include_wall_time ? csv::format_double(r.wall_time) : std::string("NA")) << ','
        << csv::quote(r.dgp_params) << '\n';
  }
  return out.str();
}

}  // namespace fvtest
