#pragma once

// The assignment engine: walks a selection order matrix, letting the group at
// each stage pick its best remaining unit. Randomness is split into named
// child streams ("som" for the turn order, "select" for tie-breaks), so a run
// with a caller-supplied order consumes tie-break randomness identically to a
// run that generated the same order itself.

#include <algorithm>
#include <string>
#include <vector>

#include "fsm/data.hpp"
#include "fsm/design.hpp"
#include "fsm/rng.hpp"
#include "fsm/selection.hpp"
#include "fsm/som.hpp"

namespace fsm {

struct TraceEntry {
  int stage = 0;    // 1-based
  int group = 0;    // 0-based
  int stratum = -1; // -1 when unstratified
  int unit = -1;    // row index into the table
  Regime regime = Regime::kNone;
};

struct AssignmentResult {
  std::vector<int> assignment;  // group per unit, size N
  SelectionOrderMatrix som;     // empty for baseline designs
  std::vector<TraceEntry> trace;
  std::vector<SelectionScorecard> scorecards;  // only when requested
  std::vector<GroupState> states;              // final group states
  std::vector<std::string> warnings;

  std::vector<int> group_counts(int n_groups) const {
    std::vector<int> c(static_cast<std::size_t>(n_groups), 0);
    for (int g : assignment) ++c[static_cast<std::size_t>(g)];
    return c;
  }
};

namespace detail {

inline void check_som_counts(const SelectionOrderMatrix& som, const DesignSpec& spec) {
  if (som.n_groups != spec.n_groups())
    throw std::invalid_argument("selection order and spec disagree on group count");
  if (som.group_at_stage.size() != static_cast<std::size_t>(spec.total_units()))
    throw std::invalid_argument("selection order length does not match unit count");
  std::vector<int> counts(static_cast<std::size_t>(som.n_groups), 0);
  for (int g : som.group_at_stage) {
    if (g < 0 || g >= som.n_groups)
      throw std::invalid_argument("selection order contains an out-of-range group");
    ++counts[static_cast<std::size_t>(g)];
  }
  for (int g = 0; g < som.n_groups; ++g)
    if (counts[static_cast<std::size_t>(g)] != spec.group_sizes[static_cast<std::size_t>(g)])
      throw std::invalid_argument("selection order group counts do not match spec");
}

}  // namespace detail

// Runs the engine over a caller-supplied order. If the order carries stratum
// labels, each stage picks only among unassigned units of its stratum.
inline AssignmentResult run_fsm_with_som(const CovariateTable& table,
                                         const DesignSpec& spec,
                                         const SelectionOrderMatrix& som,
                                         RngStream& rng,
                                         bool keep_scorecards = false) {
  spec.validate(table.n_units());
  detail::check_som_counts(som, spec);
  const auto n = table.n_units();
  const auto k = table.n_covariates();
  const bool stratified = !som.stratum_at_stage.empty();
  if (stratified && !spec.strata)
    throw std::invalid_argument("stratified order but spec has no strata");

  AssignmentResult res;
  res.som = som;
  res.assignment.assign(static_cast<std::size_t>(n), -1);
  const int min_size = *std::min_element(spec.group_sizes.begin(), spec.group_sizes.end());
  if (spec.selection != SelectionMethod::kRandom &&
      static_cast<long long>(k) + 1 > min_size)
    res.warnings.push_back(
        "smallest group (" + std::to_string(min_size) + " units) never reaches " +
        std::to_string(k + 1) + " picks, so its selections stay in the ridge regime");

  const FullSampleStats full = full_sample_stats(table);
  for (int g = 0; g < spec.n_groups(); ++g)
    res.states.push_back(GroupState::empty(g, k));

  auto sel_rng = rng.child("select");
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(n));
  for (std::size_t stage = 0; stage < som.group_at_stage.size(); ++stage) {
    const int g = som.group_at_stage[stage];
    const int stratum = stratified ? som.stratum_at_stage[stage] : -1;
    pool.clear();
    for (Eigen::Index u = 0; u < n; ++u) {
      if (taken[static_cast<std::size_t>(u)]) continue;
      if (stratified &&
          spec.strata->stratum_of_unit[static_cast<std::size_t>(u)] != stratum)
        continue;
      pool.push_back(static_cast<int>(u));
    }
    SelectionScorecard card = select_next(res.states[static_cast<std::size_t>(g)],
                                          pool, table, full, spec, sel_rng);
    card.stage = static_cast<int>(stage) + 1;
    const int unit = card.chosen;
    taken[static_cast<std::size_t>(unit)] = 1;
    res.assignment[static_cast<std::size_t>(unit)] = g;
    update_state(res.states[static_cast<std::size_t>(g)], unit,
                 table.values.row(unit).transpose());
    res.trace.push_back({card.stage, g, stratum, unit, card.regime});
    if (keep_scorecards) res.scorecards.push_back(std::move(card));
  }
  return res;
}

inline AssignmentResult run_fsm(const CovariateTable& table, const DesignSpec& spec,
                                RngStream& rng, bool keep_scorecards = false) {
  spec.validate(table.n_units());
  if (spec.strata)
    throw std::invalid_argument("spec has strata; use run_stratified");
  auto som_rng = rng.child("som");
  const SelectionOrderMatrix som = generate_som(spec, som_rng);
  return run_fsm_with_som(table, spec, som, rng, keep_scorecards);
}

inline AssignmentResult run_fsm(const CovariateTable& table, const DesignSpec& spec) {
  auto rng = RngStream::from_seed(spec.seed);
  return run_fsm(table, spec, rng);
}

inline AssignmentResult run_stratified(const CovariateTable& table,
                                       const DesignSpec& spec,
                                       StratifiedMethod method, RngStream& rng,
                                       bool keep_scorecards = false) {
  spec.validate(table.n_units());
  if (!spec.strata) throw std::invalid_argument("spec has no strata");
  auto som_rng = rng.child("som");
  const SelectionOrderMatrix som = generate_stratified_som(spec, method, som_rng);
  return run_fsm_with_som(table, spec, som, rng, keep_scorecards);
}

// Batched assignment for units that arrive in waves. Group states carry over
// between batches (and may be preloaded from earlier data via `carryover`),
// so scoring sees everything a group has accumulated; the full-sample moments
// that anchor the empty/ridge regimes come from the current batch's table
// alone. Unit indices inside each per-batch result are batch-local; indices
// stored in the returned states are offset by the preceding batch sizes.
struct SequentialResult {
  std::vector<AssignmentResult> batches;
  std::vector<GroupState> states;
};

inline SequentialResult run_sequential(const std::vector<CovariateTable>& batches,
                                       const std::vector<DesignSpec>& specs,
                                       std::vector<GroupState> carryover,
                                       RngStream& rng) {
  if (batches.empty()) throw std::invalid_argument("no batches");
  if (specs.size() != batches.size())
    throw std::invalid_argument("need one design spec per batch");
  const auto k = batches[0].n_covariates();
  const int n_groups = specs[0].n_groups();
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (batches[b].n_covariates() != k)
      throw std::invalid_argument("batches disagree on covariate dimension");
    if (specs[b].n_groups() != n_groups)
      throw std::invalid_argument("batches disagree on group count");
    if (specs[b].strata)
      throw std::invalid_argument("stratified specs are not supported in sequential mode");
    specs[b].validate(batches[b].n_units());
  }

  SequentialResult out;
  if (carryover.empty()) {
    for (int g = 0; g < n_groups; ++g)
      out.states.push_back(GroupState::empty(g, k));
  } else {
    if (static_cast<int>(carryover.size()) != n_groups)
      throw std::invalid_argument("carryover states do not match group count");
    for (const auto& st : carryover)
      if (st.n_covariates() != k)
        throw std::invalid_argument("carryover states have wrong dimension");
    out.states = std::move(carryover);
  }

  int offset = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& table = batches[b];
    const auto& spec = specs[b];
    const FullSampleStats full = full_sample_stats(table);
    auto batch_rng = rng.child("batch", b);
    auto som_rng = batch_rng.child("som");
    auto sel_rng = batch_rng.child("select");
    const SelectionOrderMatrix som = generate_som(spec, som_rng);

    AssignmentResult res;
    res.som = som;
    res.assignment.assign(static_cast<std::size_t>(table.n_units()), -1);
    std::vector<char> taken(static_cast<std::size_t>(table.n_units()), 0);
    std::vector<int> pool;
    for (std::size_t stage = 0; stage < som.group_at_stage.size(); ++stage) {
      const int g = som.group_at_stage[stage];
      pool.clear();
      for (Eigen::Index u = 0; u < table.n_units(); ++u)
        if (!taken[static_cast<std::size_t>(u)]) pool.push_back(static_cast<int>(u));
      SelectionScorecard card = select_next(out.states[static_cast<std::size_t>(g)],
                                            pool, table, full, spec, sel_rng);
      card.stage = static_cast<int>(stage) + 1;
      const int unit = card.chosen;
      taken[static_cast<std::size_t>(unit)] = 1;
      res.assignment[static_cast<std::size_t>(unit)] = g;
      update_state(out.states[static_cast<std::size_t>(g)], offset + unit,
                   table.values.row(unit).transpose());
      res.trace.push_back({card.stage, g, -1, unit, card.regime});
    }
    out.batches.push_back(std::move(res));
    offset += static_cast<int>(table.n_units());
  }
  return out;
}

}  // namespace fsm
