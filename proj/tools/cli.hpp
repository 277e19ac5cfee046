#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fvtest/fvtest.hpp"

namespace fvtest::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 2;
inline constexpr int kExitNumericError = 3;

inline json to_json(const FunctionClassSpec& spec) {
  if (std::holds_alternative<IndicatorClass>(spec)) return {{"kind", "indicator"}};
  const auto& r = std::get<RkhsClass>(spec);
  return {{"kind", "rkhs"}, {"D", r.dim}, {"gamma", r.gamma}, {"eta", r.eta}};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cli", "cannot write '" + path.string() + "'");
  out << text;
}

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("FVTEST_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "cli", "FVTEST_SEED is not an unsigned integer");
    }
  }
  return 1;
}

inline std::size_t resolve_workers(std::size_t flag) {
  if (flag > 0) return flag;
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

struct TestOptions {
  std::string input;
  std::string schema;
  std::string estimand = "cond_mean";
  std::string function_class = "aggregate";
  std::size_t dim = 100;
  std::size_t grid_size = 50;
  double gamma_min = 1e-5;
  double gamma_max = 1e-3;
  std::optional<double> gamma;  // single RKHS class
  double eta = 1.0;
  std::size_t replicates = 800;
  double alpha = 0.05;
  std::optional<std::uint64_t> seed;
  std::string multiplier = "rademacher";
  std::optional<double> propensity;
  std::size_t conditioning_index = 0;
  std::size_t workers = 1;
  std::string out_dir = ".";
};

inline json class_entry(const TestResult& r) {
  json j = {{"class", describe(r.class_spec)},
            {"spec", to_json(r.class_spec)},
            {"statistic", r.statistic},
            {"p_value_count", r.p_value},
            {"p_value_plus_one", r.p_value_plus_one}};
  if (r.threshold) j["argmax_threshold"] = *r.threshold;
  if (r.a_hat) j["a_hat"] = std::vector<double>(r.a_hat->data(), r.a_hat->data() + r.a_hat->size());
  return j;
}

inline json aggregate_entry(const AggregateResult& a) {
  return {{"q0", a.q0}, {"p_aggregate", a.p_aggregate}, {"p_cauchy", a.p_cauchy}, {"per_class_p", a.per_class_p}};
}

inline int cmd_test(const TestOptions& opt, std::ostream& log) {
  const Estimand estimand = parse_estimand(opt.estimand);
  const ColumnSchema schema = ColumnSchema::parse(opt.schema);
  const Dataset ds = load_csv(opt.input, schema, estimand);

  EstimandConfig ecfg;
  ecfg.estimand = estimand;
  ecfg.conditioning_index = opt.conditioning_index;
  ecfg.propensity.known = opt.propensity;
  const ScoreSet scores = compute_scores(ds, ecfg);

  AnalysisConfig acfg;
  acfg.dim = opt.dim;
  acfg.grid_size = opt.grid_size;
  acfg.gamma_min = opt.gamma_min;
  acfg.gamma_max = opt.gamma_max;
  acfg.eta = opt.eta;
  acfg.multiplier = parse_multiplier(opt.multiplier);
  acfg.replicates = opt.replicates;
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
    throw Error(ErrorCode::InvalidConfig, "cli", "alpha must lie in (0, 1)");
  const std::uint64_t seed = resolve_seed(opt.seed);
  const std::size_t workers = resolve_workers(opt.workers);

  std::vector<FunctionClassSpec> specs;
  const std::string& fc = opt.function_class;
  if (fc == "indicator") {
    specs.emplace_back(IndicatorClass{});
  } else if (fc == "rkhs") {
    if (opt.gamma) {
      specs.emplace_back(make_rkhs(opt.dim, *opt.gamma, opt.eta));
    } else {
      for (double g : gamma_grid(opt.grid_size, opt.gamma_min, opt.gamma_max))
        specs.emplace_back(make_rkhs(opt.dim, g, opt.eta));
    }
  } else if (fc == "aggregate" || fc == "cauchy") {
    specs = analysis_classes(acfg);
  } else {
    throw Error(ErrorCode::InvalidConfig, "cli", "unknown --class '" + fc + "'");
  }

  const MultiplierConfig mcfg{acfg.multiplier, acfg.replicates, seed};
  const StatMatrix stats = bootstrap_stat_matrix(scores, specs, mcfg, workers);
  const ScoreSet centered = center_scores(scores);
  const ClassBank bank(centered, stats.class_specs);

  json report;
  report["tool"] = "fvtest";
  report["version"] = kVersion;
  report["subcommand"] = "test";
  report["config"] = {{"input", opt.input},
                      {"schema", schema.to_string()},
                      {"estimand", opt.estimand},
                      {"class", fc},
                      {"D", opt.dim},
                      {"K", opt.grid_size},
                      {"gamma_min", opt.gamma_min},
                      {"gamma_max", opt.gamma_max},
                      {"eta", opt.eta},
                      {"B", opt.replicates},
                      {"alpha", opt.alpha},
                      {"multiplier", opt.multiplier},
                      {"conditioning_index", opt.conditioning_index}};
  if (opt.gamma) report["config"]["gamma"] = *opt.gamma;
  if (opt.propensity) report["config"]["propensity"] = *opt.propensity;
  report["seed"] = seed;
  report["n"] = ds.n();
  report["theta_hat"] = scores.theta_hat;

  json classes = json::array();
  for (std::size_t c = 0; c < stats.classes(); ++c) {
    TestResult r = column_result(stats, c);
    r.seed = seed;
    attach_argmax(r, centered, bank);
    classes.push_back(class_entry(r));
  }
  report["classes"] = classes;

  const std::size_t b = stats.replicates();
  if (b >= 2 && stats.classes() >= 2) {
    if (fc == "aggregate" || fc == "cauchy") {
      const std::size_t k = opt.grid_size;
      std::vector<std::size_t> agg(k + 1), grid(k);
      for (std::size_t c = 0; c <= k; ++c) agg[c] = c;
      for (std::size_t c = 0; c < k; ++c) grid[c] = c + 1;
      const auto aggregate = aggregate_test(select_columns(stats, agg));
      report["aggregate"] = aggregate_entry(aggregate);
      report["combined_rkhs"] = aggregate_entry(aggregate_test(select_columns(stats, grid)));
      report["p_aggregate"] = aggregate.p_aggregate;
      report["p_cauchy"] = aggregate.p_cauchy;
      report["fixed_rkhs_p"] = classes.back()["p_value_plus_one"];
    } else {
      const auto aggregate = aggregate_test(stats);
      report["aggregate"] = aggregate_entry(aggregate);
      report["p_aggregate"] = aggregate.p_aggregate;
      report["p_cauchy"] = aggregate.p_cauchy;
    }
  }

  double headline = classes.front()["p_value_plus_one"].get<double>();
  if (fc == "cauchy" && report.contains("p_cauchy")) headline = report["p_cauchy"].get<double>();
  else if (report.contains("p_aggregate")) headline = report["p_aggregate"].get<double>();
  report["p_value"] = headline;
  report["reject"] = headline <= opt.alpha;

  const auto path = std::filesystem::path(opt.out_dir) / "report.json";
  write_file(path, report.dump(2) + "\n");
  log << "n=" << ds.n() << " theta_hat=" << scores.theta_hat << " p=" << headline
      << (headline <= opt.alpha ? " (reject)" : " (do not reject)") << "\nwrote " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
  std::vector<int> examples{1, 2, 3};
  std::vector<int> settings{1, 2, 3};
  std::vector<std::size_t> sizes;  // empty: profile default
  std::optional<std::size_t> reps;
  std::optional<std::size_t> replicates;
  std::string profile = "desk";
  std::vector<std::string> methods{"Indicator", "FixedRKHS", "CombinedRKHS", "Aggregate", "Cauchy"};
  double alpha = 0.05;
  std::optional<std::uint64_t> seed;
  std::string multiplier = "rademacher";
  std::size_t dim = 100;
  std::size_t grid_size = 50;
  double gamma_min = 1e-5;
  double gamma_max = 1e-3;
  double eta = 1.0;
  Example2Coefficients coefficients;
  std::string ex2_noise = "variance";
  std::string ex3_z_range = "printed";
  bool record_wall_time = false;
  bool dry_run = false;
  std::string from_manifest;
  std::size_t workers = 1;
  std::string out_dir = ".";
};

/// The resolved, fully explicit simulation configuration. This is what the
/// manifest stores and what a rerun from the manifest reads back.
inline json resolved_simulation(const SimulateOptions& opt) {
  const bool full = opt.profile == "full";
  if (opt.profile != "desk" && opt.profile != "full")
    throw Error(ErrorCode::InvalidConfig, "cli", "--profile must be desk or full");
  std::vector<std::size_t> sizes = opt.sizes;
  if (sizes.empty()) sizes = full ? std::vector<std::size_t>{125, 250, 500, 1000, 2000}
                                  : std::vector<std::size_t>{125, 250, 500};
  json j;
  j["examples"] = opt.examples;
  j["settings"] = opt.settings;
  j["n"] = sizes;
  j["reps"] = opt.reps.value_or(500);
  j["B"] = opt.replicates.value_or(full ? 800 : 300);
  j["profile"] = opt.profile;
  j["methods"] = opt.methods;
  j["alpha"] = opt.alpha;
  j["master_seed"] = resolve_seed(opt.seed);
  j["multiplier"] = opt.multiplier;
  j["D"] = opt.dim;
  j["K"] = opt.grid_size;
  j["gamma_min"] = opt.gamma_min;
  j["gamma_max"] = opt.gamma_max;
  j["eta"] = opt.eta;
  j["ex2_coefficients"] = {{"beta0", opt.coefficients.beta0},
                           {"beta1", opt.coefficients.beta1},
                           {"gamma0", opt.coefficients.gamma0},
                           {"gamma1", opt.coefficients.gamma1}};
  j["ex2_noise"] = opt.ex2_noise;
  j["ex3_z_range"] = opt.ex3_z_range;
  j["record_wall_time"] = opt.record_wall_time;
  return j;
}

inline MonteCarloConfig monte_carlo_config(const json& j, std::size_t workers) {
  MonteCarloConfig cfg;
  try {
    for (int e : j.at("examples").get<std::vector<int>>())
      for (int s : j.at("settings").get<std::vector<int>>())
        for (std::size_t n : j.at("n").get<std::vector<std::size_t>>()) cfg.cells.push_back({e, s, n});
    cfg.methods.clear();
    for (const auto& m : j.at("methods").get<std::vector<std::string>>()) cfg.methods.push_back(parse_method(m));
    cfg.n_reps = j.at("reps").get<std::size_t>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    cfg.analysis.replicates = j.at("B").get<std::size_t>();
    cfg.analysis.multiplier = parse_multiplier(j.at("multiplier").get<std::string>());
    cfg.analysis.dim = j.at("D").get<std::size_t>();
    cfg.analysis.grid_size = j.at("K").get<std::size_t>();
    cfg.analysis.gamma_min = j.at("gamma_min").get<double>();
    cfg.analysis.gamma_max = j.at("gamma_max").get<double>();
    cfg.analysis.eta = j.at("eta").get<double>();
    const auto& c = j.at("ex2_coefficients");
    cfg.dgp.coefficients = {c.at("beta0").get<double>(), c.at("beta1").get<double>(), c.at("gamma0").get<double>(),
                            c.at("gamma1").get<double>()};
    const auto noise = j.at("ex2_noise").get<std::string>();
    if (noise != "variance" && noise != "sd")
      throw Error(ErrorCode::InvalidConfig, "cli", "ex2 noise must be variance or sd");
    cfg.dgp.noise = noise == "variance" ? NoiseScale::Variance : NoiseScale::StandardDeviation;
    const auto zr = j.at("ex3_z_range").get<std::string>();
    if (zr != "printed" && zr != "symmetric")
      throw Error(ErrorCode::InvalidConfig, "cli", "ex3 z range must be printed or symmetric");
    cfg.dgp.z_range = zr == "printed" ? Example3ZRange::Printed : Example3ZRange::Symmetric;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, "cli", std::string("bad simulation configuration: ") + e.what());
  }
  cfg.workers = workers;
  for (const auto& cell : cfg.cells) check_dgp(cell);
  if (cfg.n_reps < 1) throw Error(ErrorCode::InvalidConfig, "cli", "--reps must be >= 1");
  if (cfg.analysis.replicates < 2) throw Error(ErrorCode::InvalidConfig, "cli", "--B must be >= 2");
  analysis_classes(cfg.analysis);  // validates D, K and the gamma range
  return cfg;
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& log) {
  json resolved;
  if (!opt.from_manifest.empty()) {
    std::ifstream in(opt.from_manifest);
    if (!in) throw Error(ErrorCode::IoError, "cli", "cannot open manifest '" + opt.from_manifest + "'");
    try {
      resolved = json::parse(in).at("config");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, "cli", std::string("bad manifest: ") + e.what());
    }
  } else {
    resolved = resolved_simulation(opt);
  }
  const MonteCarloConfig cfg = monte_carlo_config(resolved, resolve_workers(opt.workers));
  const std::size_t tasks = cfg.cells.size() * cfg.n_reps;

  if (opt.dry_run) {
    log << "cells=" << cfg.cells.size() << " reps=" << cfg.n_reps << " tasks=" << tasks
        << " bootstrap_draws=" << tasks * cfg.analysis.replicates << "\n";
    return kExitOk;
  }

  const RejectionTable table = monte_carlo(cfg);
  const bool timing = resolved.value("record_wall_time", false);
  const auto dir = std::filesystem::path(opt.out_dir);
  write_file(dir / "rejection_table.csv", to_csv(table, timing));

  json manifest;
  manifest["tool"] = "fvtest";
  manifest["version"] = kVersion;
  manifest["subcommand"] = "simulate";
  manifest["config"] = resolved;
  manifest["task_count"] = tasks;
  json cells = json::array();
  for (const auto& c : cfg.cells) cells.push_back({{"example", c.example}, {"setting", c.setting}, {"n", c.n}});
  manifest["cells"] = cells;
  json errors = json::array();
  for (const auto& e : table.errors)
    errors.push_back({{"example", e.cell.example}, {"setting", e.cell.setting}, {"n", e.cell.n}, {"error", e.message}});
  manifest["errors"] = errors;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  log << "wrote " << table.rows.size() << " rows to " << (dir / "rejection_table.csv").string() << "\n";
  if (!table.errors.empty()) log << table.errors.size() << " cell(s) failed; see manifest.json\n";
  return kExitOk;
}

// Replaces `--config FILE` with one `--key=value` flag per entry of FILE that
// is not already given on the command line.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return rest;
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "cli", "cannot read config file " + path);

  auto given = [&](const std::string& name) {
    return std::any_of(rest.begin(), rest.end(), [&](const std::string& a) {
      return a == "--" + name || a.starts_with("--" + name + "=");
    });
  };
  std::vector<std::string> extra;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--" || given(item.name)) continue;
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    extra.push_back("--" + item.name + "=" + value);
  }
  rest.insert(rest.begin() + (rest.empty() ? 0 : 1), extra.begin(), extra.end());
  return rest;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Nonparametric tests of constancy for function-valued parameters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  TestOptions topt;
  auto* test = app.add_subcommand("test", "Test one CSV dataset");
  std::string config_path;
  test->add_option("--config", config_path, "key=value configuration file; command-line flags take precedence");
  test->add_option("--input", topt.input, "CSV file")->required();
  test->add_option("--schema", topt.schema, "role=column list, e.g. outcome=y,conditioning=x")->required();
  test->add_option("--estimand", topt.estimand, "cond_mean | cate | cond_cov")->capture_default_str();
  test->add_option("--class", topt.function_class, "indicator | rkhs | aggregate | cauchy")->capture_default_str();
  test->add_option("--D", topt.dim, "RKHS basis size")->capture_default_str();
  test->add_option("--K", topt.grid_size, "number of gamma values")->capture_default_str();
  test->add_option("--gamma-min", topt.gamma_min)->capture_default_str();
  test->add_option("--gamma-max", topt.gamma_max)->capture_default_str();
  test->add_option("--gamma", topt.gamma, "single RKHS class (with --class rkhs)");
  test->add_option("--eta", topt.eta)->capture_default_str();
  test->add_option("--B", topt.replicates, "bootstrap replicates")->capture_default_str();
  test->add_option("--alpha", topt.alpha)->capture_default_str();
  test->add_option("--seed", topt.seed, "master seed (falls back to FVTEST_SEED)");
  test->add_option("--multiplier", topt.multiplier, "rademacher | standard_normal")->capture_default_str();
  test->add_option("--propensity", topt.propensity, "known Pr(T=1) for randomized designs");
  test->add_option("--conditioning-index", topt.conditioning_index)->capture_default_str();
  test->add_option("--workers", topt.workers, "threads; 0 uses all cores")->capture_default_str();
  test->add_option("--out-dir", topt.out_dir)->capture_default_str();

  SimulateOptions sopt;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo size and power study");
  sim->add_option("--config", config_path, "key=value configuration file; command-line flags take precedence");
  sim->add_option("--example", sopt.examples, "examples to run (1, 2, 3)")->delimiter(',');
  sim->add_option("--setting", sopt.settings, "settings to run (1, 2, 3)")->delimiter(',');
  sim->add_option("--n", sopt.sizes, "sample sizes")->delimiter(',');
  sim->add_option("--reps", sopt.reps, "Monte Carlo replications");
  sim->add_option("--B", sopt.replicates, "bootstrap replicates");
  sim->add_option("--profile", sopt.profile, "desk | full")->capture_default_str();
  sim->add_option("--methods", sopt.methods, "methods to tabulate")->delimiter(',');
  sim->add_option("--alpha", sopt.alpha)->capture_default_str();
  sim->add_option("--seed", sopt.seed, "master seed (falls back to FVTEST_SEED)");
  sim->add_option("--multiplier", sopt.multiplier)->capture_default_str();
  sim->add_option("--D", sopt.dim)->capture_default_str();
  sim->add_option("--K", sopt.grid_size)->capture_default_str();
  sim->add_option("--gamma-min", sopt.gamma_min)->capture_default_str();
  sim->add_option("--gamma-max", sopt.gamma_max)->capture_default_str();
  sim->add_option("--eta", sopt.eta)->capture_default_str();
  sim->add_option("--beta0", sopt.coefficients.beta0)->capture_default_str();
  sim->add_option("--beta1", sopt.coefficients.beta1)->capture_default_str();
  sim->add_option("--gamma0", sopt.coefficients.gamma0)->capture_default_str();
  sim->add_option("--gamma1", sopt.coefficients.gamma1)->capture_default_str();
  sim->add_option("--ex2-noise", sopt.ex2_noise, "variance | sd: reading of N(0, 0.5)")->capture_default_str();
  sim->add_option("--ex3-z-range", sopt.ex3_z_range, "printed | symmetric")->capture_default_str();
  sim->add_flag("--record-wall-time", sopt.record_wall_time, "fill the wall_time column (not reproducible)");
  sim->add_flag("--dry-run", sopt.dry_run, "print the task count and exit");
  sim->add_option("--from-manifest", sopt.from_manifest, "rerun the configuration stored in a manifest");
  sim->add_option("--workers", sopt.workers, "threads; 0 uses all cores")->capture_default_str();
  sim->add_option("--out-dir", sopt.out_dir)->capture_default_str();

  try {
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::Success& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, log, err);
    return kExitDataError;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitDataError;
  }

  try {
    if (*test) return cmd_test(topt, log);
    return cmd_simulate(sopt, log);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return is_data_error(e.code()) ? kExitDataError : kExitNumericError;
  } catch (const std::exception& e) {
    err << "fvtest: " << e.what() << "\n";
    return kExitNumericError;
  }
}

}  // namespace fvtest::cli
