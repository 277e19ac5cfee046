#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fvtest/csv.hpp"
#include "fvtest/error.hpp"

namespace fvtest {

/// Which function-valued parameter is being tested for constancy.
enum class Estimand { CondMean, Cate, CondCov };

inline std::string_view to_string(Estimand e) {
  switch (e) {
    case Estimand::CondMean: return "cond_mean";
    case Estimand::Cate: return "cate";
    case Estimand::CondCov: return "cond_cov";
  }
  return "unknown";
}

inline Estimand parse_estimand(std::string_view s) {
  if (s == "cond_mean") return Estimand::CondMean;
  if (s == "cate") return Estimand::Cate;
  if (s == "cond_cov") return Estimand::CondCov;
  throw Error(ErrorCode::InvalidConfig, "datamodel", "unknown estimand '" + std::string(s) + "'");
}

struct Observation {
  double outcome = 0.0;
  std::vector<double> conditioning;
  std::optional<int> treatment;
  std::optional<std::vector<double>> covariates;
  std::optional<double> secondary_outcome;
};

struct Dataset {
  std::vector<Observation> observations;
  Estimand estimand = Estimand::CondMean;

  std::size_t n() const noexcept { return observations.size(); }

  std::vector<double> outcomes() const {
    std::vector<double> out;
    out.reserve(n());
    for (const auto& o : observations) out.push_back(o.outcome);
    return out;
  }
  std::vector<double> conditioning_column(std::size_t k) const {
    std::vector<double> out;
    out.reserve(n());
    for (const auto& o : observations) out.push_back(o.conditioning.at(k));
    return out;
  }
};

enum class Role { Outcome, Conditioning, Treatment, Covariate, SecondaryOutcome, Ignore };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::Outcome: return "outcome";
    case Role::Conditioning: return "conditioning";
    case Role::Treatment: return "treatment";
    case Role::Covariate: return "covariate";
    case Role::SecondaryOutcome: return "secondary_outcome";
    case Role::Ignore: return "ignore";
  }
  return "unknown";
}

inline Role parse_role(std::string_view s) {
  if (s == "outcome") return Role::Outcome;
  if (s == "conditioning") return Role::Conditioning;
  if (s == "treatment") return Role::Treatment;
  if (s == "covariate") return Role::Covariate;
  if (s == "secondary_outcome") return Role::SecondaryOutcome;
  if (s == "ignore") return Role::Ignore;
  throw Error(ErrorCode::InvalidConfig, "datamodel", "unknown role '" + std::string(s) + "'");
}

/// Ordered column-name to role mapping. Order matters for roles that may
/// repeat (conditioning, covariate): it fixes the vector component order.
struct ColumnSchema {
  std::vector<std::pair<std::string, Role>> columns;

  std::vector<std::string> names_with(Role r) const {
    std::vector<std::string> out;
    for (const auto& [name, role] : columns)
      if (role == r) out.push_back(name);
    return out;
  }

  /// Parses "outcome=y,conditioning=x,covariate=w1".
  static ColumnSchema parse(std::string_view spec) {
    ColumnSchema schema;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
      std::size_t comma = spec.find(',', pos);
      if (comma == std::string_view::npos) comma = spec.size();
      std::string_view item = spec.substr(pos, comma - pos);
      pos = comma + 1;
      if (item.empty()) continue;
      std::size_t eq = item.find('=');
      if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size())
        throw Error(ErrorCode::InvalidConfig, "datamodel",
                    "schema item '" + std::string(item) + "' is not role=column");
      schema.columns.emplace_back(std::string(item.substr(eq + 1)),
                                  parse_role(item.substr(0, eq)));
    }
    return schema;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [name, role] : columns) {
      if (!out.empty()) out += ',';
      out += std::string(fvtest::to_string(role)) + "=" + name;
    }
    return out;
  }
};

/// Checks the schema invariants against the estimand.
inline void check_schema(const ColumnSchema& schema, Estimand estimand) {
  const auto outcomes = schema.names_with(Role::Outcome);
  if (outcomes.size() != 1)
    throw Error(ErrorCode::RoleMismatch, "datamodel",
                "schema needs exactly one outcome column, got " + std::to_string(outcomes.size()));
  if (schema.names_with(Role::Conditioning).empty())
    throw Error(ErrorCode::RoleMismatch, "datamodel", "schema needs at least one conditioning column");
  if (schema.names_with(Role::Treatment).size() > 1)
    throw Error(ErrorCode::RoleMismatch, "datamodel", "schema has more than one treatment column");
  if (schema.names_with(Role::SecondaryOutcome).size() > 1)
    throw Error(ErrorCode::RoleMismatch, "datamodel", "schema has more than one secondary_outcome column");
  if (estimand == Estimand::Cate && schema.names_with(Role::Treatment).empty())
    throw Error(ErrorCode::RoleMismatch, "datamodel", "estimand cate requires a treatment column");
  if (estimand == Estimand::CondCov && schema.names_with(Role::SecondaryOutcome).empty())
    throw Error(ErrorCode::RoleMismatch, "datamodel",
                "estimand cond_cov requires a secondary_outcome column");
}

struct Violation {
  ErrorCode code;
  std::size_t row;  // observation index; SIZE_MAX for dataset-level problems
  std::string message;
};

inline constexpr std::size_t kDatasetLevel = static_cast<std::size_t>(-1);

/// Every invariant violation in the dataset, in row order.
inline std::vector<Violation> find_violations(const Dataset& ds) {
  std::vector<Violation> out;
  if (ds.n() < 2) {
    out.push_back({ErrorCode::EmptyData, kDatasetLevel,
                   "need at least 2 observations, got " + std::to_string(ds.n())});
    return out;
  }
  const Observation& first = ds.observations.front();
  const bool has_t = first.treatment.has_value();
  const bool has_x = first.covariates.has_value();
  const bool has_s = first.secondary_outcome.has_value();
  const std::size_t dim_v = first.conditioning.size();
  const std::size_t dim_x = has_x ? first.covariates->size() : 0;

  if (ds.estimand == Estimand::Cate && !has_t)
    out.push_back({ErrorCode::RoleMismatch, kDatasetLevel, "estimand cate requires treatment"});
  if (ds.estimand == Estimand::CondCov && !has_s)
    out.push_back({ErrorCode::RoleMismatch, kDatasetLevel,
                   "estimand cond_cov requires secondary_outcome"});

  for (std::size_t i = 0; i < ds.n(); ++i) {
    const Observation& o = ds.observations[i];
    const std::string at = "row " + std::to_string(i) + ": ";
    if (!std::isfinite(o.outcome))
      out.push_back({ErrorCode::InvalidValue, i, at + "outcome is not finite"});
    if (o.conditioning.empty())
      out.push_back({ErrorCode::InvalidValue, i, at + "conditioning vector is empty"});
    if (o.conditioning.size() != dim_v)
      out.push_back({ErrorCode::InvalidValue, i, at + "conditioning dimension differs from row 0"});
    for (double v : o.conditioning)
      if (!std::isfinite(v)) {
        out.push_back({ErrorCode::InvalidValue, i, at + "conditioning value is not finite"});
        break;
      }
    if (o.treatment.has_value() != has_t || o.covariates.has_value() != has_x ||
        o.secondary_outcome.has_value() != has_s)
      out.push_back({ErrorCode::InvalidValue, i, at + "optional fields differ in shape from row 0"});
    if (o.treatment && *o.treatment != 0 && *o.treatment != 1)
      out.push_back({ErrorCode::InvalidValue, i, at + "treatment must be 0 or 1"});
    if (o.covariates) {
      if (o.covariates->size() != dim_x)
        out.push_back({ErrorCode::InvalidValue, i, at + "covariate dimension differs from row 0"});
      for (double x : *o.covariates)
        if (!std::isfinite(x)) {
          out.push_back({ErrorCode::InvalidValue, i, at + "covariate value is not finite"});
          break;
        }
    }
    if (o.secondary_outcome && !std::isfinite(*o.secondary_outcome))
      out.push_back({ErrorCode::InvalidValue, i, at + "secondary_outcome is not finite"});
  }
  return out;
}

/// Returns the dataset unchanged if every invariant holds; otherwise throws
/// an Error coded by the first violation whose message lists all of them.
inline const Dataset& validate(const Dataset& ds) {
  auto violations = find_violations(ds);
  if (violations.empty()) return ds;
  std::string msg;
  for (const auto& v : violations) {
    if (!msg.empty()) msg += "; ";
    msg += v.message;
  }
  throw Error(violations.front().code, "datamodel", msg);
}

/// Parses CSV text (header row + data rows) under the given schema.
inline Dataset parse_csv(std::string_view text, const ColumnSchema& schema, Estimand estimand) {
  check_schema(schema, estimand);
  auto rows = csv::parse(text);
  if (rows.empty()) throw Error(ErrorCode::EmptyData, "datamodel", "file has no header row");

  const csv::Row& header = rows.front();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], j);

  auto column_of = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw Error(ErrorCode::MissingColumn, "datamodel", "column '" + name + "' not in header");
    return it->second;
  };
  auto indices_of = [&](Role r) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& name : schema.names_with(r)) out.emplace_back(name, column_of(name));
    return out;
  };
  const auto y_col = indices_of(Role::Outcome);
  const auto v_cols = indices_of(Role::Conditioning);
  const auto t_col = indices_of(Role::Treatment);
  const auto x_cols = indices_of(Role::Covariate);
  const auto s_col = indices_of(Role::SecondaryOutcome);

  Dataset ds;
  ds.estimand = estimand;
  ds.observations.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const csv::Row& row = rows[r];
    const std::size_t data_row = r - 1;
    auto cell = [&](const std::pair<std::string, std::size_t>& col) {
      if (col.second >= row.size())
        throw Error(ErrorCode::ParseError, "datamodel",
                    "row " + std::to_string(data_row) + " column '" + col.first + "': missing cell");
      auto value = csv::parse_double(row[col.second]);
      if (!value)
        throw Error(ErrorCode::ParseError, "datamodel",
                    "row " + std::to_string(data_row) + " column '" + col.first +
                        "': cannot parse '" + row[col.second] + "' as a number");
      return *value;
    };

    Observation o;
    o.outcome = cell(y_col.front());
    for (const auto& c : v_cols) o.conditioning.push_back(cell(c));
    if (!t_col.empty()) {
      const double t = cell(t_col.front());
      if (t != 0.0 && t != 1.0)
        throw Error(ErrorCode::ParseError, "datamodel",
                    "row " + std::to_string(data_row) + " column '" + t_col.front().first +
                        "': treatment must be 0 or 1, got " + row[t_col.front().second]);
      o.treatment = static_cast<int>(t);
    }
    if (!x_cols.empty()) {
      o.covariates.emplace();
      for (const auto& c : x_cols) o.covariates->push_back(cell(c));
    }
    if (!s_col.empty()) o.secondary_outcome = cell(s_col.front());
    ds.observations.push_back(std::move(o));
  }
  if (ds.n() < 2)
    throw Error(ErrorCode::EmptyData, "datamodel",
                "need at least 2 data rows, got " + std::to_string(ds.n()));
  validate(ds);
  return ds;
}

inline Dataset load_csv(const std::string& path, const ColumnSchema& schema, Estimand estimand) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "datamodel", "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, estimand);
}

/// Writes the dataset as CSV using the schema's column names. Values use the
/// shortest round-trip decimal form, so parse_csv(to_csv(ds)) reproduces ds.
inline std::string to_csv(const Dataset& ds, const ColumnSchema& schema) {
  std::ostringstream out;
  std::vector<std::pair<std::string, Role>> cols;
  for (const auto& c : schema.columns)
    if (c.second != Role::Ignore) cols.push_back(c);
  // A column may carry two roles (e.g. conditioning and covariate); it is
  // written once, under its first role.
  std::vector<bool> emit(cols.size(), true);
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t k = 0; k < j; ++k)
      if (cols[k].first == cols[j].first) emit[j] = false;
  bool first_col = true;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (!emit[j]) continue;
    out << (first_col ? "" : ",") << csv::quote(cols[j].first);
    first_col = false;
  }
  out << '\n';
  for (const auto& o : ds.observations) {
    std::size_t v_k = 0, x_k = 0;
    first_col = true;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (!emit[j]) {
        if (cols[j].second == Role::Conditioning) ++v_k;
        if (cols[j].second == Role::Covariate) ++x_k;
        continue;
      }
      if (!first_col) out << ',';
      first_col = false;
      switch (cols[j].second) {
        case Role::Outcome: out << csv::format_double(o.outcome); break;
        case Role::Conditioning: out << csv::format_double(o.conditioning.at(v_k++)); break;
        case Role::Treatment: out << o.treatment.value(); break;
        case Role::Covariate: out << csv::format_double(o.covariates.value().at(x_k++)); break;
        case Role::SecondaryOutcome: out << csv::format_double(o.secondary_outcome.value()); break;
        case Role::Ignore: break;
      }
    }
    out << '\n';
  }
  return out.str();
}

/// Default schema matching the column layout the simulation generators use.
inline ColumnSchema default_schema(const Dataset& ds) {
  ColumnSchema s;
  s.columns.emplace_back("y", Role::Outcome);
  const std::size_t dv = ds.observations.empty() ? 1 : ds.observations.front().conditioning.size();
  for (std::size_t k = 0; k < dv; ++k)
    s.columns.emplace_back(dv == 1 ? "v" : "v" + std::to_string(k + 1), Role::Conditioning);
  if (!ds.observations.empty()) {
    const auto& o = ds.observations.front();
    if (o.treatment) s.columns.emplace_back("t", Role::Treatment);
    if (o.covariates)
      for (std::size_t k = 0; k < o.covariates->size(); ++k)
        s.columns.emplace_back("x" + std::to_string(k + 1), Role::Covariate);
    if (o.secondary_outcome) s.columns.emplace_back("s", Role::SecondaryOutcome);
  }
  return s;
}

}  // namespace fvtest
