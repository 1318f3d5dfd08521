#pragma once

// A Design names one complete randomization scheme (engine-based or
// baseline); draw_assignment is the single entry point replicate loops use,
// so inference and comparison code never special-case the design family.

#include <optional>
#include <stdexcept>

#include "fsm/baselines.hpp"
#include "fsm/data.hpp"
#include "fsm/design.hpp"
#include "fsm/engine.hpp"
#include "fsm/rng.hpp"

namespace fsm {

enum class DesignKind { kFsm, kCrd, kRerandomization };

inline const char* design_kind_name(DesignKind k) {
  switch (k) {
    case DesignKind::kFsm: return "fsm";
    case DesignKind::kCrd: return "crd";
    case DesignKind::kRerandomization: return "rerandomization";
  }
  return "?";
}

struct Design {
  DesignKind kind = DesignKind::kFsm;
  DesignSpec spec;
  RerandSpec rerand;  // kRerandomization only
  std::optional<StratifiedMethod> stratified_method;  // kFsm with strata
};

// One assignment draw. Inside replicate loops the rerandomization threshold
// must be fixed up front (rerand.threshold set, e.g. via rerand_threshold);
// recalibrating per replicate would both waste work and shift the design
// between replicates.
inline AssignmentResult draw_assignment(const CovariateTable& table,
                                        const Design& design, RngStream& rng) {
  switch (design.kind) {
    case DesignKind::kCrd:
      return crd(table, design.spec, rng);
    case DesignKind::kRerandomization: {
      return rerandomize(table, design.spec, design.rerand, rng).result;
    }
    case DesignKind::kFsm:
      if (design.spec.strata)
        return run_stratified(
            table, design.spec,
            design.stratified_method.value_or(StratifiedMethod::kPerStratum), rng);
      return run_fsm(table, design.spec, rng);
  }
  throw std::logic_error("unknown design kind");
}

}  // namespace fsm
