#pragma once

// File exports. All writers emit stable schemas with 1-based group, stratum
// and stage labels; missing values are written as NA. Doubles use shortest
// round-trip formatting so identical runs produce identical bytes.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsm/csv.hpp"
#include "fsm/data.hpp"
#include "fsm/diagnostics.hpp"
#include "fsm/engine.hpp"
#include "fsm/som.hpp"

namespace fsm {

// unit_id,group,stage,regime ; stage/regime are NA for baseline designs.
inline void write_assignment_csv(const std::filesystem::path& path,
                                 const CovariateTable& table,
                                 const AssignmentResult& res) {
  std::vector<std::string> stage_of(static_cast<std::size_t>(table.n_units()), "NA");
  std::vector<std::string> regime_of(static_cast<std::size_t>(table.n_units()), "NA");
  for (const auto& t : res.trace) {
    stage_of[static_cast<std::size_t>(t.unit)] = std::to_string(t.stage);
    regime_of[static_cast<std::size_t>(t.unit)] = regime_name(t.regime);
  }
  csv::Writer w(path);
  w.row({"unit_id", "group", "stage", "regime"});
  for (Eigen::Index i = 0; i < table.n_units(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    w.row({table.unit_ids[u], std::to_string(res.assignment[u] + 1), stage_of[u],
           regime_of[u]});
  }
}

// stage,group,stratum,unit_id,regime in selection order.
inline void write_trace_csv(const std::filesystem::path& path,
                            const CovariateTable& table,
                            const AssignmentResult& res) {
  csv::Writer w(path);
  w.row({"stage", "group", "stratum", "unit_id", "regime"});
  for (const auto& t : res.trace)
    w.row({std::to_string(t.stage), std::to_string(t.group + 1),
           t.stratum < 0 ? "NA" : std::to_string(t.stratum + 1),
           table.unit_ids[static_cast<std::size_t>(t.unit)], regime_name(t.regime)});
}

// stage,group,stratum,prob ; prob is the conditional probability that the
// stage went to the first group (recorded by the two-group generator only).
inline void write_som_csv(const std::filesystem::path& path,
                          const SelectionOrderMatrix& som) {
  csv::Writer w(path);
  w.row({"stage", "group", "stratum", "prob"});
  for (std::size_t s = 0; s < som.group_at_stage.size(); ++s)
    w.row({std::to_string(s + 1), std::to_string(som.group_at_stage[s] + 1),
           som.stratum_at_stage.empty() ? "NA"
                                        : std::to_string(som.stratum_at_stage[s] + 1),
           som.prob_at_stage.empty() ? "NA"
                                     : csv::format_double(som.prob_at_stage[s])});
}

// stage,group,regime,unit_id,score,tied,chosen ; one row per candidate per
// stage, in pool order.
inline void write_scorecards_csv(const std::filesystem::path& path,
                                 const CovariateTable& table,
                                 const std::vector<SelectionScorecard>& cards) {
  csv::Writer w(path);
  w.row({"stage", "group", "regime", "unit_id", "score", "tied", "chosen"});
  for (const auto& c : cards) {
    for (const auto& [unit, score] : c.scores) {
      const bool tied =
          std::find(c.tie_set.begin(), c.tie_set.end(), unit) != c.tie_set.end();
      w.row({std::to_string(c.stage), std::to_string(c.group + 1),
             regime_name(c.regime), table.unit_ids[static_cast<std::size_t>(unit)],
             csv::format_double(score), tied ? "1" : "0",
             unit == c.chosen ? "1" : "0"});
    }
  }
}

// design,draw,metric,group_a,group_b,column,value (draw is 1-based; column is
// NA for matrix metrics).
inline void write_balance_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string,
                                                          std::vector<BalanceRecord>>>&
                                  per_design) {
  csv::Writer w(path);
  w.row({"design", "draw", "metric", "group_a", "group_b", "column", "value"});
  for (const auto& [design, records] : per_design)
    for (const auto& r : records)
      w.row({design, std::to_string(r.draw + 1), r.metric,
             std::to_string(r.g1 + 1), std::to_string(r.g2 + 1),
             r.column.empty() ? "NA" : r.column, csv::format_double(r.value)});
}

inline nlohmann::json dist_to_json(const DistSummary& d) {
  return {{"min", d.min}, {"q1", d.q1},   {"median", d.median},
          {"q3", d.q3},   {"max", d.max}, {"mean", d.mean}};
}

inline nlohmann::json balance_report_to_json(const BalanceReport& rep) {
  nlohmann::json j;
  j["n_draws"] = rep.n_draws;
  j["n_groups"] = rep.n_groups;
  nlohmann::json main_cols = nlohmann::json::object();
  for (std::size_t i = 0; i < rep.main_columns.size(); ++i)
    main_cols[rep.main_columns[i]] = rep.asmd_main_by_column[i];
  j["asmd_main_by_column"] = main_cols;
  j["asmd_main_mean"] = rep.asmd_main_mean;
  j["asmd_main_dist"] = dist_to_json(rep.asmd_main_dist);
  if (!rep.second_order_columns.empty()) {
    nlohmann::json so = nlohmann::json::object();
    for (std::size_t i = 0; i < rep.second_order_columns.size(); ++i)
      so[rep.second_order_columns[i]] = rep.asmd_second_by_column[i];
    j["asmd_second_by_column"] = so;
    j["asmd_second_mean"] = rep.asmd_second_mean;
    j["asmd_second_dist"] = dist_to_json(rep.asmd_second_dist);
  }
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace fsm
