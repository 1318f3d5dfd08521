#pragma once

// Design specification shared by the SOM generators, the selection engine and
// the baseline designs. Group and stratum indices are 0-based internally;
// file formats use 1-based labels.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsm {

enum class SelectionMethod { kDOptimal, kAOptimal, kRandom };

enum class StratifiedMethod { kPerStratum, kInterleaved };

// Weighted set of prediction points for the A-optimal criterion. points rows
// are full design rows (leading 1 included); t() is the policy matrix P'WP.
struct AOptPolicy {
  Eigen::MatrixXd points;   // q x (k+1)
  Eigen::VectorXd weights;  // q, nonnegative

  Eigen::MatrixXd t() const {
    if (points.rows() != weights.size())
      throw std::invalid_argument("A-opt policy: row/weight count mismatch");
    return points.transpose() * weights.asDiagonal() * points;
  }
};

inline AOptPolicy aopt_identity_policy(Eigen::Index k) {
  AOptPolicy p;
  p.points = Eigen::MatrixXd::Identity(k + 1, k + 1);
  p.weights = Eigen::VectorXd::Ones(k + 1);
  return p;
}

struct StrataSpec {
  std::vector<int> stratum_of_unit;           // N, values in [0, S)
  std::vector<std::string> stratum_names;     // S
  std::vector<std::vector<int>> group_sizes;  // S x G, n_{sg} (zeros allowed)

  int n_strata() const { return static_cast<int>(stratum_names.size()); }
};

struct DesignSpec {
  std::vector<int> group_sizes;  // G >= 2 entries, each >= 1
  SelectionMethod selection = SelectionMethod::kDOptimal;
  std::optional<AOptPolicy> aopt;  // A-opt only; identity policy when absent
  double epsilon = 0.01;           // ridge mixing weight, > 0
  double tie_tolerance = 1e-9;     // relative tie window in score units
  double rank_tolerance = 1e-9;    // relative eigenvalue cutoff for regime test
  std::optional<StrataSpec> strata;
  std::uint64_t seed = 0;  // used by convenience overloads without an RngStream

  int n_groups() const { return static_cast<int>(group_sizes.size()); }

  int total_units() const {
    int s = 0;
    for (int n : group_sizes) s += n;
    return s;
  }

  void validate(Eigen::Index n_units) const {
    if (group_sizes.size() < 2)
      throw std::invalid_argument("need at least two treatment groups");
    for (int n : group_sizes)
      if (n < 1) throw std::invalid_argument("every group size must be >= 1");
    if (total_units() != n_units)
      throw std::invalid_argument("group sizes sum to " +
                                  std::to_string(total_units()) + " but table has " +
                                  std::to_string(n_units) + " units");
    if (!(epsilon > 0.0))
      throw std::invalid_argument("epsilon must be positive");
    if (tie_tolerance < 0.0)
      throw std::invalid_argument("tie tolerance must be nonnegative");
    if (!(rank_tolerance > 0.0))
      throw std::invalid_argument("rank tolerance must be positive");
    if (strata) {
      const auto& st = *strata;
      const int S = st.n_strata();
      const int G = n_groups();
      if (S < 1) throw std::invalid_argument("strata present but no stratum names");
      if (static_cast<Eigen::Index>(st.stratum_of_unit.size()) != n_units)
        throw std::invalid_argument("stratum label count does not match unit count");
      if (static_cast<int>(st.group_sizes.size()) != S)
        throw std::invalid_argument("per-stratum size rows do not match stratum count");
      std::vector<int> stratum_units(S, 0);
      for (int s : st.stratum_of_unit) {
        if (s < 0 || s >= S) throw std::invalid_argument("stratum label out of range");
        ++stratum_units[s];
      }
      std::vector<int> group_totals(G, 0);
      for (int s = 0; s < S; ++s) {
        if (static_cast<int>(st.group_sizes[s].size()) != G)
          throw std::invalid_argument("per-stratum size row has wrong group count");
        int row = 0;
        for (int g = 0; g < G; ++g) {
          if (st.group_sizes[s][g] < 0)
            throw std::invalid_argument("per-stratum group sizes must be >= 0");
          row += st.group_sizes[s][g];
          group_totals[g] += st.group_sizes[s][g];
        }
        if (row != stratum_units[s])
          throw std::invalid_argument("stratum '" + st.stratum_names[s] +
                                      "' sizes sum to " + std::to_string(row) +
                                      " but it contains " +
                                      std::to_string(stratum_units[s]) + " units");
      }
      for (int g = 0; g < G; ++g)
        if (group_totals[g] != group_sizes[g])
          throw std::invalid_argument("per-stratum sizes for group " +
                                      std::to_string(g + 1) +
                                      " do not sum to its total size");
    }
  }
};

}  // namespace fsm
