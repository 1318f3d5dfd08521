// Command-line front end. Four subcommands share one JSON config document:
//
//   assign    covariates.csv -> assignment.csv trace.csv som.csv metadata.json
//   compare   covariates.csv -> balance_long.csv summary.json metadata.json
//   simulate  (synthetic or file inputs) -> se_table.csv metadata.json
//   test      covariates + outcomes + assignment -> test.json metadata.json
//
// Flags override config fields. Unknown config fields are errors. Exit codes:
// 0 ok, 2 config/validation, 3 data, 4 runtime budget exhausted. Progress
// goes to stderr; stdout carries only "name<TAB>path" lines for the outputs.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsm/fsm.hpp"

namespace {

using nlohmann::json;
namespace csv = fsm::csv;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string covariates;
  std::string outcomes;
  std::string assignment;
  std::string config_path;
  std::string out_dir = ".";
  int threads = 1;
  bool scores = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<int> draws;
  std::optional<int> replicates;
  std::optional<std::string> designs;
  std::optional<std::string> dgp;
  std::optional<std::string> model;
};

// ---- config parsing --------------------------------------------------------

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw ConfigError(where + ": unknown field '" + key + "'");
}

template <typename T>
T field_as(const json& obj, const std::string& where, const std::string& name,
           T fallback) {
  if (!obj.contains(name)) return fallback;
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + name + ": wrong type");
  }
}

struct StrataCfg {
  std::string column;
  std::vector<std::vector<int>> group_sizes;
  fsm::StratifiedMethod method = fsm::StratifiedMethod::kPerStratum;
};

struct InferenceCfg {
  fsm::TestStatistic statistic = fsm::TestStatistic::kAbsDiffInMeans;
  int replicates = 10000;
  bool add_one = false;
  int g1 = 0, g2 = 1;
};

struct CliConfig {
  std::string method = "fsm";
  std::vector<int> group_sizes;
  fsm::SelectionMethod selection = fsm::SelectionMethod::kDOptimal;
  double epsilon = 0.01;
  double tie_tolerance = 1e-9;
  double rank_tolerance = 1e-9;
  std::uint64_t seed = 0;
  std::optional<std::string> id_column;
  std::vector<std::string> columns;
  std::optional<StrataCfg> strata;
  fsm::RerandSpec rerand;
  fsm::BalanceConfig balance;
  std::vector<std::string> designs = {"crd", "rerandomization", "fsm"};
  int draws = 800;
  InferenceCfg inference;
  std::string dgp = "hainmueller";
  std::string model = "b1";
  int n_units = 120;
  std::string outcome_column;
  std::string group_column = "group";
};

std::string canonical_design(const std::string& name) {
  if (name == "fsm") return "fsm";
  if (name == "crd") return "crd";
  if (name == "rr" || name == "rerandomization") return "rerandomization";
  throw ConfigError("designs: unknown design '" + name +
                    "' (expected fsm, crd, rerandomization)");
}

CliConfig parse_config(const json& cfg) {
  check_keys(cfg, "config",
             {"method", "group_sizes", "selection", "epsilon", "tie_tolerance",
              "rank_tolerance", "seed", "id_column", "columns", "strata",
              "rerandomization", "balance", "designs", "draws", "inference",
              "dgp", "model", "n_units", "outcome_column", "group_column"});
  CliConfig c;
  c.method = field_as<std::string>(cfg, "config", "method", c.method);
  if (c.method != "fsm" && c.method != "crd" && c.method != "rerandomization")
    throw ConfigError("config.method: expected fsm, crd or rerandomization");
  c.group_sizes = field_as<std::vector<int>>(cfg, "config", "group_sizes", {});
  const auto selection =
      field_as<std::string>(cfg, "config", "selection", "d_optimal");
  if (selection == "d_optimal")
    c.selection = fsm::SelectionMethod::kDOptimal;
  else if (selection == "a_optimal")
    c.selection = fsm::SelectionMethod::kAOptimal;
  else if (selection == "random")
    c.selection = fsm::SelectionMethod::kRandom;
  else
    throw ConfigError("config.selection: expected d_optimal, a_optimal or random");
  c.epsilon = field_as<double>(cfg, "config", "epsilon", c.epsilon);
  c.tie_tolerance = field_as<double>(cfg, "config", "tie_tolerance", c.tie_tolerance);
  c.rank_tolerance =
      field_as<double>(cfg, "config", "rank_tolerance", c.rank_tolerance);
  c.seed = field_as<std::uint64_t>(cfg, "config", "seed", c.seed);
  if (cfg.contains("id_column"))
    c.id_column = field_as<std::string>(cfg, "config", "id_column", "");
  c.columns = field_as<std::vector<std::string>>(cfg, "config", "columns", {});
  c.draws = field_as<int>(cfg, "config", "draws", c.draws);
  c.dgp = field_as<std::string>(cfg, "config", "dgp", c.dgp);
  c.model = field_as<std::string>(cfg, "config", "model", c.model);
  c.n_units = field_as<int>(cfg, "config", "n_units", c.n_units);
  c.outcome_column =
      field_as<std::string>(cfg, "config", "outcome_column", c.outcome_column);
  c.group_column =
      field_as<std::string>(cfg, "config", "group_column", c.group_column);

  if (cfg.contains("strata")) {
    const json& st = cfg.at("strata");
    if (!st.is_object()) throw ConfigError("config.strata: expected an object");
    check_keys(st, "config.strata", {"column", "group_sizes", "method"});
    StrataCfg sc;
    sc.column = field_as<std::string>(st, "config.strata", "column", "");
    if (sc.column.empty())
      throw ConfigError("config.strata.column: a stratum column is required");
    sc.group_sizes =
        field_as<std::vector<std::vector<int>>>(st, "config.strata", "group_sizes", {});
    if (sc.group_sizes.empty())
      throw ConfigError("config.strata.group_sizes: per-stratum sizes are required");
    const auto method =
        field_as<std::string>(st, "config.strata", "method", "per_stratum");
    if (method == "per_stratum")
      sc.method = fsm::StratifiedMethod::kPerStratum;
    else if (method == "interleaved")
      sc.method = fsm::StratifiedMethod::kInterleaved;
    else
      throw ConfigError("config.strata.method: expected per_stratum or interleaved");
    c.strata = std::move(sc);
  }

  if (cfg.contains("rerandomization")) {
    const json& rr = cfg.at("rerandomization");
    if (!rr.is_object())
      throw ConfigError("config.rerandomization: expected an object");
    check_keys(rr, "config.rerandomization",
               {"acceptance_rate", "pilot_draws", "max_attempts", "threshold",
                "criterion_columns"});
    c.rerand.acceptance_rate = field_as<double>(rr, "config.rerandomization",
                                                "acceptance_rate",
                                                c.rerand.acceptance_rate);
    c.rerand.pilot_draws =
        field_as<int>(rr, "config.rerandomization", "pilot_draws", c.rerand.pilot_draws);
    c.rerand.max_attempts = field_as<long>(rr, "config.rerandomization",
                                           "max_attempts", c.rerand.max_attempts);
    if (rr.contains("threshold") && !rr.at("threshold").is_null())
      c.rerand.threshold =
          field_as<double>(rr, "config.rerandomization", "threshold", 0.0);
    c.rerand.criterion_columns = field_as<std::vector<std::string>>(
        rr, "config.rerandomization", "criterion_columns", {});
  }

  c.balance.second_order = true;
  if (cfg.contains("balance")) {
    const json& b = cfg.at("balance");
    if (!b.is_object()) throw ConfigError("config.balance: expected an object");
    check_keys(b, "config.balance",
               {"main_columns", "second_order", "expand_order", "demean",
                "frobenius"});
    c.balance.main_columns = field_as<std::vector<std::string>>(
        b, "config.balance", "main_columns", {});
    c.balance.second_order =
        field_as<bool>(b, "config.balance", "second_order", true);
    c.balance.expand_order =
        field_as<int>(b, "config.balance", "expand_order", c.balance.expand_order);
    c.balance.demean_expansion = field_as<bool>(b, "config.balance", "demean",
                                                c.balance.demean_expansion);
    c.balance.frobenius =
        field_as<bool>(b, "config.balance", "frobenius", c.balance.frobenius);
  }

  if (cfg.contains("designs")) {
    const auto names =
        field_as<std::vector<std::string>>(cfg, "config", "designs", {});
    if (names.empty()) throw ConfigError("config.designs: list is empty");
    c.designs.clear();
    for (const auto& n : names) c.designs.push_back(canonical_design(n));
  }

  if (cfg.contains("inference")) {
    const json& inf = cfg.at("inference");
    if (!inf.is_object()) throw ConfigError("config.inference: expected an object");
    check_keys(inf, "config.inference",
               {"statistic", "replicates", "add_one", "groups"});
    const auto stat =
        field_as<std::string>(inf, "config.inference", "statistic", "abs_diff_in_means");
    if (stat == "abs_diff_in_means")
      c.inference.statistic = fsm::TestStatistic::kAbsDiffInMeans;
    else if (stat == "studentized")
      c.inference.statistic = fsm::TestStatistic::kStudentized;
    else
      throw ConfigError(
          "config.inference.statistic: expected abs_diff_in_means or studentized");
    c.inference.replicates =
        field_as<int>(inf, "config.inference", "replicates", c.inference.replicates);
    c.inference.add_one =
        field_as<bool>(inf, "config.inference", "add_one", c.inference.add_one);
    const auto groups =
        field_as<std::vector<int>>(inf, "config.inference", "groups", {1, 2});
    if (groups.size() != 2 || groups[0] == groups[1] || groups[0] < 1 || groups[1] < 1)
      throw ConfigError("config.inference.groups: expected two distinct 1-based labels");
    c.inference.g1 = groups[0] - 1;
    c.inference.g2 = groups[1] - 1;
  }
  return c;
}

json load_config_json(const Options& opt) {
  if (opt.config_path.empty()) return json::object();
  std::ifstream in(opt.config_path);
  if (!in) throw ConfigError("cannot open config file " + opt.config_path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
}

// Folds the flag overrides into the config document. The result is what gets
// hashed into metadata, so reruns with the same effective settings agree on
// the hash no matter how the settings were supplied. --threads and --out stay
// outside: they must not change any output byte.
json effective_config(json cfg, const Options& opt) {
  if (opt.seed) cfg["seed"] = *opt.seed;
  if (opt.method) cfg["method"] = *opt.method;
  if (opt.draws) cfg["draws"] = *opt.draws;
  if (opt.replicates) {
    json inf = cfg.contains("inference") ? cfg["inference"] : json::object();
    inf["replicates"] = *opt.replicates;
    cfg["inference"] = inf;
  }
  if (opt.designs) {
    std::vector<std::string> names;
    std::string cur;
    for (char ch : *opt.designs + ",") {
      if (ch == ',') {
        if (!cur.empty()) names.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    cfg["designs"] = names;
  }
  if (opt.dgp) cfg["dgp"] = *opt.dgp;
  if (opt.model) cfg["model"] = *opt.model;
  return cfg;
}

// Hash over the command name and the effective config document; nlohmann
// objects dump with sorted keys, so the digest is insensitive to field order
// in the file.
std::string config_hash(const std::string& command, const json& effective) {
  const std::string dumped = command + "\n" + effective.dump();
  const std::uint64_t h = fsm::detail::fnv1a64(dumped.c_str());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

// ---- data loading ----------------------------------------------------------

struct LoadedInput {
  fsm::CovariateTable table;
  std::optional<fsm::StrataSpec> strata;
};

std::ptrdiff_t header_index(const std::vector<std::string>& header,
                            const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<std::ptrdiff_t>(j);
  return -1;
}

// Resolves the id column: an explicit config name must exist; otherwise
// "unit_id" is used when present and rows are numbered when not.
std::ptrdiff_t resolve_id_column(const csv::Table& raw, const std::string& file,
                                 const std::optional<std::string>& configured) {
  if (configured) {
    const auto idx = header_index(raw.header, *configured);
    if (idx < 0)
      throw DataError(file + ": id column '" + *configured + "' not found");
    return idx;
  }
  return header_index(raw.header, "unit_id");
}

LoadedInput load_input(const std::string& path, const CliConfig& cfg) {
  csv::Table raw;
  try {
    raw = csv::read_file(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const std::string file = std::filesystem::path(path).filename().string();
  if (raw.rows.empty()) throw DataError(file + ": no data rows");

  const auto id_idx = resolve_id_column(raw, file, cfg.id_column);
  std::ptrdiff_t stratum_idx = -1;
  if (cfg.strata) {
    stratum_idx = header_index(raw.header, cfg.strata->column);
    if (stratum_idx < 0)
      throw DataError(file + ": stratum column '" + cfg.strata->column +
                      "' not found");
  }

  std::vector<std::size_t> cov_idx;
  std::vector<std::string> cov_names;
  if (cfg.columns.empty()) {
    for (std::size_t j = 0; j < raw.header.size(); ++j) {
      if (static_cast<std::ptrdiff_t>(j) == id_idx) continue;
      if (static_cast<std::ptrdiff_t>(j) == stratum_idx) continue;
      cov_idx.push_back(j);
      cov_names.push_back(raw.header[j]);
    }
  } else {
    for (const auto& name : cfg.columns) {
      const auto idx = header_index(raw.header, name);
      if (idx < 0) throw DataError(file + ": column '" + name + "' not found");
      if (idx == id_idx || idx == stratum_idx)
        throw DataError(file + ": column '" + name + "' is not a covariate");
      cov_idx.push_back(static_cast<std::size_t>(idx));
      cov_names.push_back(name);
    }
  }
  if (cov_idx.empty()) throw DataError(file + ": no covariate columns");

  const auto n = static_cast<Eigen::Index>(raw.rows.size());
  Eigen::MatrixXd vals(n, static_cast<Eigen::Index>(cov_idx.size()));
  std::vector<std::string> ids;
  std::vector<std::string> stratum_labels;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cells = raw.rows[static_cast<std::size_t>(i)];
    if (id_idx >= 0) ids.push_back(cells[static_cast<std::size_t>(id_idx)]);
    if (stratum_idx >= 0)
      stratum_labels.push_back(cells[static_cast<std::size_t>(stratum_idx)]);
    for (std::size_t j = 0; j < cov_idx.size(); ++j) {
      double v;
      if (!csv::parse_double(cells[cov_idx[j]], v))
        throw DataError(file + ": row " + std::to_string(i + 2) + ", column '" +
                        cov_names[j] + "': cannot parse '" + cells[cov_idx[j]] +
                        "' as a finite number");
      vals(i, static_cast<Eigen::Index>(j)) = v;
    }
  }

  LoadedInput out;
  try {
    out.table =
        fsm::make_covariate_table(std::move(vals), std::move(cov_names), std::move(ids));
  } catch (const std::exception& e) {
    throw DataError(file + ": " + e.what());
  }

  if (cfg.strata) {
    fsm::StrataSpec spec;
    std::map<std::string, int> seen;
    for (const auto& label : stratum_labels) {
      auto it = seen.find(label);
      if (it == seen.end()) {
        it = seen.emplace(label, static_cast<int>(spec.stratum_names.size())).first;
        spec.stratum_names.push_back(label);
      }
      spec.stratum_of_unit.push_back(it->second);
    }
    if (cfg.strata->group_sizes.size() != spec.stratum_names.size())
      throw ConfigError("config.strata.group_sizes: " +
                        std::to_string(cfg.strata->group_sizes.size()) +
                        " rows for " + std::to_string(spec.stratum_names.size()) +
                        " strata found in the data");
    spec.group_sizes = cfg.strata->group_sizes;
    out.strata = std::move(spec);
  }
  return out;
}

// Single named numeric column keyed by unit id; values are returned in the
// covariate table's row order. Files without an id column must match the
// table row-for-row.
Eigen::VectorXd load_aligned_column(const std::string& path, const CliConfig& cfg,
                                    const fsm::CovariateTable& table,
                                    const std::string& wanted_column,
                                    const std::string& what) {
  csv::Table raw;
  try {
    raw = csv::read_file(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const std::string file = std::filesystem::path(path).filename().string();
  const auto id_idx = resolve_id_column(raw, file, cfg.id_column);

  std::ptrdiff_t col_idx = -1;
  if (!wanted_column.empty()) {
    col_idx = header_index(raw.header, wanted_column);
    if (col_idx < 0)
      throw DataError(file + ": " + what + " column '" + wanted_column +
                      "' not found");
  } else {
    for (std::size_t j = 0; j < raw.header.size(); ++j)
      if (static_cast<std::ptrdiff_t>(j) != id_idx) {
        if (col_idx >= 0)
          throw ConfigError(file + " has several candidate " + what +
                            " columns; name one in the config");
        col_idx = static_cast<std::ptrdiff_t>(j);
      }
    if (col_idx < 0) throw DataError(file + ": no " + what + " column");
  }

  auto parse_cell = [&](const std::string& cell, std::size_t row) {
    double v;
    if (!csv::parse_double(cell, v))
      throw DataError(file + ": row " + std::to_string(row + 2) + ", column '" +
                      raw.header[static_cast<std::size_t>(col_idx)] +
                      "': cannot parse '" + cell + "' as a finite number");
    return v;
  };

  const auto n = table.n_units();
  Eigen::VectorXd out(n);
  if (id_idx < 0) {
    if (static_cast<Eigen::Index>(raw.rows.size()) != n)
      throw DataError(file + ": has " + std::to_string(raw.rows.size()) +
                      " rows but the covariate table has " + std::to_string(n) +
                      " and there is no id column to align by");
    for (Eigen::Index i = 0; i < n; ++i)
      out[i] = parse_cell(
          raw.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(col_idx)],
          static_cast<std::size_t>(i));
    return out;
  }

  std::map<std::string, double> by_id;
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& id = raw.rows[r][static_cast<std::size_t>(id_idx)];
    if (!by_id.emplace(id, parse_cell(raw.rows[r][static_cast<std::size_t>(col_idx)], r))
             .second)
      throw DataError(file + ": duplicate unit id '" + id + "'");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& id = table.unit_ids[static_cast<std::size_t>(i)];
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError(file + ": unit id '" + id + "' is missing");
    out[i] = it->second;
    by_id.erase(it);
  }
  if (!by_id.empty())
    throw DataError(file + ": unit id '" + by_id.begin()->first +
                    "' does not appear in the covariates");
  return out;
}

// ---- shared command plumbing -----------------------------------------------

fsm::DesignSpec make_spec(const CliConfig& cfg, const LoadedInput& input) {
  fsm::DesignSpec spec;
  spec.group_sizes = cfg.group_sizes;
  spec.selection = cfg.selection;
  if (spec.selection == fsm::SelectionMethod::kAOptimal)
    spec.aopt = fsm::aopt_identity_policy(static_cast<int>(input.table.n_covariates()));
  spec.epsilon = cfg.epsilon;
  spec.tie_tolerance = cfg.tie_tolerance;
  spec.rank_tolerance = cfg.rank_tolerance;
  spec.seed = cfg.seed;
  spec.strata = input.strata;
  if (spec.group_sizes.empty())
    throw ConfigError("config.group_sizes: required (one size per group)");
  return spec;
}

fsm::Design make_design(const std::string& name, const CliConfig& cfg,
                        const LoadedInput& input) {
  fsm::Design d;
  d.spec = make_spec(cfg, input);
  if (name == "crd") {
    d.kind = fsm::DesignKind::kCrd;
    d.spec.strata.reset();  // baselines randomize over the whole sample
  } else if (name == "rerandomization") {
    d.kind = fsm::DesignKind::kRerandomization;
    d.spec.strata.reset();
    d.rerand = cfg.rerand;
  } else {
    d.kind = fsm::DesignKind::kFsm;
    if (cfg.strata) d.stratified_method = cfg.strata->method;
  }
  return d;
}

// Fixes the rerandomization threshold before any replicate loop so every
// replicate samples the same design.
void fix_threshold(fsm::Design& d, const fsm::CovariateTable& table,
                   fsm::RngStream& root) {
  if (d.kind != fsm::DesignKind::kRerandomization || d.rerand.threshold) return;
  auto rng = root.child("calibrate");
  d.rerand.threshold = fsm::rerand_threshold(table, d.spec, d.rerand, rng);
}

fsm::RerandResult run_rerand_guarded(const fsm::CovariateTable& table,
                                     const fsm::DesignSpec& spec,
                                     const fsm::RerandSpec& rr,
                                     fsm::RngStream& rng) {
  try {
    return fsm::rerandomize(table, spec, rr, rng);
  } catch (const std::runtime_error& e) {
    if (std::string(e.what()).find("attempts") != std::string::npos)
      throw BudgetError(e.what());
    throw;
  }
}

std::uint64_t resolve_seed(const Options& opt, const CliConfig& cfg) {
  return opt.seed ? *opt.seed : cfg.seed;
}

std::filesystem::path out_path(const Options& opt, const std::string& name) {
  std::filesystem::create_directories(opt.out_dir);
  return std::filesystem::path(opt.out_dir) / name;
}

void announce(const std::string& name, const std::filesystem::path& path) {
  std::cout << name << '\t' << path.string() << '\n';
}

json base_metadata(const std::string& command, const json& effective,
                   std::uint64_t seed) {
  json meta;
  meta["command"] = command;
  meta["config_hash"] = config_hash(command, effective);
  meta["seed"] = seed;
  meta["version"] = fsm::kVersion;
  return meta;
}

// ---- assign ----------------------------------------------------------------

int cmd_assign(const Options& opt) {
  const json effective = effective_config(load_config_json(opt), opt);
  CliConfig cfg = parse_config(effective);
  if (opt.method) cfg.method = *opt.method;  // already folded, parse validated
  const std::uint64_t seed = resolve_seed(opt, cfg);

  const LoadedInput input = load_input(opt.covariates, cfg);
  const auto& table = input.table;
  std::cerr << "[assign] " << table.n_units() << " units, "
            << table.n_covariates() << " covariates, method " << cfg.method
            << ", seed " << seed << '\n';

  auto rng = fsm::RngStream::from_seed(seed);
  json meta = base_metadata("assign", effective, seed);
  meta["method"] = cfg.method;
  meta["n_units"] = static_cast<long>(table.n_units());
  meta["n_covariates"] = static_cast<long>(table.n_covariates());

  fsm::AssignmentResult res;
  if (cfg.method == "fsm") {
    const auto spec = make_spec(cfg, input);
    meta["group_sizes"] = spec.group_sizes;
    auto drng = rng.child("assign");
    res = input.strata
              ? fsm::run_stratified(table, spec, cfg.strata->method, drng, opt.scores)
              : fsm::run_fsm(table, spec, drng, opt.scores);
  } else if (cfg.method == "crd") {
    LoadedInput plain = input;
    plain.strata.reset();
    const auto spec = make_spec(cfg, plain);
    meta["group_sizes"] = spec.group_sizes;
    auto drng = rng.child("assign");
    res = fsm::crd(table, spec, drng);
  } else {
    LoadedInput plain = input;
    plain.strata.reset();
    const auto spec = make_spec(cfg, plain);
    meta["group_sizes"] = spec.group_sizes;
    auto drng = rng.child("assign");
    const auto rr = run_rerand_guarded(table, spec, cfg.rerand, drng);
    res = rr.result;
    meta["rerandomization"] = {{"threshold", rr.threshold},
                               {"attempts", rr.attempts}};
  }
  meta["warnings"] = res.warnings;
  for (const auto& w : res.warnings) std::cerr << "[assign] warning: " << w << '\n';

  const auto assignment_path = out_path(opt, "assignment.csv");
  fsm::write_assignment_csv(assignment_path, table, res);
  announce("assignment", assignment_path);
  const auto trace_path = out_path(opt, "trace.csv");
  fsm::write_trace_csv(trace_path, table, res);
  announce("trace", trace_path);
  const auto som_path = out_path(opt, "som.csv");
  fsm::write_som_csv(som_path, res.som);
  announce("som", som_path);
  if (opt.scores) {
    const auto scores_path = out_path(opt, "scores.csv");
    fsm::write_scorecards_csv(scores_path, table, res.scorecards);
    announce("scores", scores_path);
  }
  const auto meta_path = out_path(opt, "metadata.json");
  fsm::write_json(meta_path, meta);
  announce("metadata", meta_path);
  return 0;
}

// ---- compare ----------------------------------------------------------------

int cmd_compare(const Options& opt) {
  const json effective = effective_config(load_config_json(opt), opt);
  CliConfig cfg = parse_config(effective);
  const std::uint64_t seed = resolve_seed(opt, cfg);
  if (cfg.draws < 1) throw ConfigError("config.draws: need at least one draw");
  {
    std::set<std::string> unique(cfg.designs.begin(), cfg.designs.end());
    if (unique.size() != cfg.designs.size())
      throw ConfigError("config.designs: duplicate design");
  }

  const LoadedInput input = load_input(opt.covariates, cfg);
  const auto& table = input.table;
  auto root = fsm::RngStream::from_seed(seed);

  json meta = base_metadata("compare", effective, seed);
  meta["designs"] = cfg.designs;
  meta["draws"] = cfg.draws;
  meta["n_units"] = static_cast<long>(table.n_units());
  meta["n_covariates"] = static_cast<long>(table.n_covariates());

  std::vector<std::pair<std::string, std::vector<fsm::BalanceRecord>>> long_records;
  json summary;
  summary["draws"] = cfg.draws;
  summary["seed"] = seed;
  summary["config_hash"] = meta["config_hash"];
  summary["version"] = fsm::kVersion;
  json per_design = json::object();

  for (const auto& name : cfg.designs) {
    fsm::Design design = make_design(name, cfg, input);
    fix_threshold(design, table, root);
    if (design.kind == fsm::DesignKind::kRerandomization)
      meta["rerandomization_threshold"] = *design.rerand.threshold;
    std::cerr << "[compare] " << name << ": " << cfg.draws << " draws...\n";

    std::vector<std::vector<int>> draws(static_cast<std::size_t>(cfg.draws));
    auto drng = root.child(name);
    fsm::parallel_for(draws.size(), opt.threads, [&](std::size_t r) {
      auto rng = drng.child("draw", r);
      draws[r] = fsm::draw_assignment(table, design, rng).assignment;
    });

    const int n_groups = design.spec.n_groups();
    long_records.emplace_back(
        name, fsm::balance_records(table, draws, n_groups, cfg.balance));
    const auto report = fsm::summarize_draws(table, draws, n_groups, cfg.balance);
    per_design[name] = fsm::balance_report_to_json(report);
    if (cfg.balance.frobenius) {
      per_design[name]["frob_corr_dist"] = fsm::dist_to_json(report.frob_corr_dist);
      per_design[name]["frob_cov_dist"] = fsm::dist_to_json(report.frob_cov_dist);
    }
    std::cerr << "[compare] " << name << ": mean asmd "
              << report.asmd_main_mean << '\n';
  }
  summary["designs"] = per_design;

  const auto balance_path = out_path(opt, "balance_long.csv");
  fsm::write_balance_csv(balance_path, long_records);
  announce("balance", balance_path);
  const auto summary_path = out_path(opt, "summary.json");
  fsm::write_json(summary_path, summary);
  announce("summary", summary_path);
  const auto meta_path = out_path(opt, "metadata.json");
  fsm::write_json(meta_path, meta);
  announce("metadata", meta_path);
  return 0;
}

// ---- simulate ----------------------------------------------------------------

int cmd_simulate(const Options& opt) {
  const json effective = effective_config(load_config_json(opt), opt);
  CliConfig cfg = parse_config(effective);
  const std::uint64_t seed = resolve_seed(opt, cfg);
  if (cfg.draws < 2) throw ConfigError("config.draws: need at least two draws");

  auto root = fsm::RngStream::from_seed(seed);

  LoadedInput input;
  if (cfg.dgp == "hainmueller") {
    if (cfg.n_units < 2) throw ConfigError("config.n_units: need at least two units");
    auto grng = root.child("dgp");
    input.table = fsm::hainmueller_sample(cfg.n_units, grng);
  } else {
    input = load_input(cfg.dgp, cfg);
    input.strata.reset();  // sequential-wave and strata logic stay out of here
  }
  const auto& table = input.table;

  if (cfg.group_sizes.empty()) {
    if (table.n_units() % 2 != 0)
      throw ConfigError(
          "config.group_sizes: required when the unit count is odd");
    cfg.group_sizes = {static_cast<int>(table.n_units() / 2),
                       static_cast<int>(table.n_units() / 2)};
  }

  const int n_groups = static_cast<int>(cfg.group_sizes.size());
  Eigen::MatrixXd potentials;
  if (cfg.model.size() == 2 && cfg.model[0] == 'b' && cfg.model[1] >= '1' &&
      cfg.model[1] <= '6') {
    auto mrng = root.child("model");
    potentials = fsm::model_potentials(cfg.model, table, n_groups, mrng);
  } else {
    // a potentials file: one column per group, aligned like outcomes
    csv::Table raw;
    try {
      raw = csv::read_file(cfg.model);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
    const std::string file = std::filesystem::path(cfg.model).filename().string();
    const auto id_idx = resolve_id_column(raw, file, cfg.id_column);
    std::vector<std::string> pot_cols;
    for (std::size_t j = 0; j < raw.header.size(); ++j)
      if (static_cast<std::ptrdiff_t>(j) != id_idx) pot_cols.push_back(raw.header[j]);
    if (static_cast<int>(pot_cols.size()) < n_groups)
      throw DataError(file + ": need one potential-outcome column per group (" +
                      std::to_string(n_groups) + ")");
    CliConfig sub = cfg;
    potentials.resize(table.n_units(), n_groups);
    for (int g = 0; g < n_groups; ++g)
      potentials.col(g) = load_aligned_column(cfg.model, sub, table,
                                              pot_cols[static_cast<std::size_t>(g)],
                                              "potential");
  }

  std::cerr << "[simulate] dgp " << cfg.dgp << ", model " << cfg.model << ", "
            << table.n_units() << " units, " << cfg.draws << " draws per design\n";

  json meta = base_metadata("simulate", effective, seed);
  meta["designs"] = cfg.designs;
  meta["draws"] = cfg.draws;
  meta["dgp"] = cfg.dgp;
  meta["model"] = cfg.model;
  meta["n_units"] = static_cast<long>(table.n_units());

  struct Row {
    std::string design;
    double se = 0, mean = 0;
  };
  std::vector<Row> rows;
  for (const auto& name : cfg.designs) {
    fsm::Design design = make_design(name, cfg, input);
    fix_threshold(design, table, root);
    if (design.kind == fsm::DesignKind::kRerandomization)
      meta["rerandomization_threshold"] = *design.rerand.threshold;
    auto drng = root.child(name);
    const auto dist = fsm::randomization_se(table, design, potentials, cfg.draws,
                                            drng, opt.threads);
    rows.push_back({name, dist.sd, dist.mean});
    std::cerr << "[simulate] " << name << ": se " << dist.sd << '\n';
  }

  double fsm_se = -1.0;
  for (const auto& r : rows)
    if (r.design == "fsm") fsm_se = r.se;

  const auto se_path = out_path(opt, "se_table.csv");
  {
    csv::Writer w(se_path);
    w.row({"design", "draws", "se_diff_in_means", "mean_diff_in_means",
           "ratio_to_fsm"});
    for (const auto& r : rows)
      w.row({r.design, std::to_string(cfg.draws), csv::format_double(r.se),
             csv::format_double(r.mean),
             fsm_se > 0.0 ? csv::format_double(r.se / fsm_se) : "NA"});
  }
  announce("se_table", se_path);
  const auto meta_path = out_path(opt, "metadata.json");
  fsm::write_json(meta_path, meta);
  announce("metadata", meta_path);
  return 0;
}

// ---- test ----------------------------------------------------------------

int cmd_test(const Options& opt) {
  const json effective = effective_config(load_config_json(opt), opt);
  CliConfig cfg = parse_config(effective);
  const std::uint64_t seed = resolve_seed(opt, cfg);

  const LoadedInput input = load_input(opt.covariates, cfg);
  const auto& table = input.table;
  const Eigen::VectorXd y =
      load_aligned_column(opt.outcomes, cfg, table, cfg.outcome_column, "outcome");
  const Eigen::VectorXd graw =
      load_aligned_column(opt.assignment, cfg, table, cfg.group_column, "group");

  fsm::Design design = make_design(
      cfg.method == "crd" ? "crd"
                          : cfg.method == "rerandomization" ? "rerandomization"
                                                            : "fsm",
      cfg, input);
  const int n_groups = design.spec.n_groups();

  std::vector<int> observed(static_cast<std::size_t>(table.n_units()));
  std::vector<int> counts(static_cast<std::size_t>(n_groups), 0);
  for (Eigen::Index i = 0; i < table.n_units(); ++i) {
    const double v = graw[i];
    const int g = static_cast<int>(v);
    if (v != g || g < 1 || g > n_groups)
      throw DataError("assignment file: unit id '" +
                      table.unit_ids[static_cast<std::size_t>(i)] +
                      "' has group label " + csv::format_double(v) +
                      " outside 1.." + std::to_string(n_groups));
    observed[static_cast<std::size_t>(i)] = g - 1;
    ++counts[static_cast<std::size_t>(g - 1)];
  }
  for (int g = 0; g < n_groups; ++g)
    if (counts[static_cast<std::size_t>(g)] !=
        design.spec.group_sizes[static_cast<std::size_t>(g)])
      throw DataError("assignment file: group " + std::to_string(g + 1) + " has " +
                      std::to_string(counts[static_cast<std::size_t>(g)]) +
                      " units but the config says " +
                      std::to_string(design.spec.group_sizes[static_cast<std::size_t>(g)]));

  auto root = fsm::RngStream::from_seed(seed);
  fix_threshold(design, table, root);

  std::cerr << "[test] " << cfg.inference.replicates << " replicates, statistic "
            << fsm::statistic_name(cfg.inference.statistic) << ", design "
            << fsm::design_kind_name(design.kind) << '\n';
  auto trng = root.child("test");
  const auto res = fsm::randomization_test(
      table, design, y, observed, cfg.inference.statistic,
      cfg.inference.replicates, trng, opt.threads, cfg.inference.add_one,
      cfg.inference.g1, cfg.inference.g2);

  json meta = base_metadata("test", effective, seed);
  meta["method"] = cfg.method;
  meta["n_units"] = static_cast<long>(table.n_units());
  if (design.kind == fsm::DesignKind::kRerandomization)
    meta["rerandomization_threshold"] = *design.rerand.threshold;

  json out;
  out["statistic"] = fsm::statistic_name(cfg.inference.statistic);
  out["t_obs"] = res.t_obs;
  out["p_value"] = res.p_value;
  out["n_replicates"] = res.n_replicates;
  out["add_one"] = cfg.inference.add_one;
  out["groups"] = {cfg.inference.g1 + 1, cfg.inference.g2 + 1};
  out["estimate"] =
      fsm::diff_in_means(y, observed, cfg.inference.g1, cfg.inference.g2);
  out["replicate_dist"] = fsm::dist_to_json(fsm::summarize_values(res.replicate_stats));
  out["seed"] = seed;
  out["config_hash"] = meta["config_hash"];
  out["version"] = fsm::kVersion;

  const auto test_path = out_path(opt, "test.json");
  fsm::write_json(test_path, out);
  announce("test", test_path);
  const auto meta_path = out_path(opt, "metadata.json");
  fsm::write_json(meta_path, meta);
  announce("metadata", meta_path);
  std::cerr << "[test] p = " << res.p_value << " (t_obs " << res.t_obs << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite selection model: assignment, comparison, simulation, testing"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON config file");
    sub->add_option("--seed", opt.seed, "RNG seed (overrides config)");
    sub->add_option("--threads", opt.threads, "replicate-level parallelism")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", opt.out_dir, "output directory (default .)");
  };

  auto* assign = app.add_subcommand("assign", "assign units to groups");
  assign->add_option("covariates", opt.covariates, "covariate CSV")->required();
  assign->add_option("--method", opt.method, "fsm | crd | rerandomization");
  assign->add_flag("--scores", opt.scores, "also write per-stage score tables");
  add_common(assign);

  auto* compare = app.add_subcommand("compare", "balance metrics across designs");
  compare->add_option("covariates", opt.covariates, "covariate CSV")->required();
  compare->add_option("--draws", opt.draws, "draws per design");
  compare->add_option("--designs", opt.designs, "comma list: crd,rerandomization,fsm");
  add_common(compare);

  auto* simulate = app.add_subcommand("simulate", "randomization SEs on a DGP");
  simulate->add_option("--dgp", opt.dgp, "hainmueller or a covariate CSV path");
  simulate->add_option("--model", opt.model, "b1..b6 or a potentials CSV path");
  simulate->add_option("--draws", opt.draws, "draws per design");
  simulate->add_option("--designs", opt.designs, "comma list: crd,rerandomization,fsm");
  add_common(simulate);

  auto* test = app.add_subcommand("test", "randomization test of the sharp null");
  test->add_option("covariates", opt.covariates, "covariate CSV")->required();
  test->add_option("outcomes", opt.outcomes, "outcome CSV")->required();
  test->add_option("assignment", opt.assignment, "assignment CSV")->required();
  test->add_option("--M,--replicates", opt.replicates, "Monte-Carlo replicates");
  add_common(test);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(assign)) return cmd_assign(opt);
    if (app.got_subcommand(compare)) return cmd_compare(opt);
    if (app.got_subcommand(simulate)) return cmd_simulate(opt);
    return cmd_test(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
