#pragma once

// Baseline designs the selection engine is compared against: completely
// randomized allocation (uniform over all partitions with the given sizes)
// and rerandomization (redraw completely randomized assignments until the
// largest pairwise group-mean Mahalanobis distance falls below a threshold
// calibrated to accept a target share of draws).

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/data.hpp"
#include "fsm/design.hpp"
#include "fsm/engine.hpp"
#include "fsm/rng.hpp"

namespace fsm {

// Uniform random partition into the requested group sizes.
inline AssignmentResult crd(const CovariateTable& table, const DesignSpec& spec,
                            RngStream& rng) {
  spec.validate(table.n_units());
  const auto perm = rng.permutation(static_cast<std::size_t>(table.n_units()));
  AssignmentResult res;
  res.assignment.assign(perm.size(), -1);
  std::size_t pos = 0;
  for (int g = 0; g < spec.n_groups(); ++g)
    for (int i = 0; i < spec.group_sizes[static_cast<std::size_t>(g)]; ++i)
      res.assignment[perm[pos++]] = g;
  return res;
}

// Largest squared Mahalanobis distance between group means over all group
// pairs, under the full-sample divide-by-N covariance of the criterion
// columns, scaled by n_g*n_g'/(n_g+n_g'). Empty criterion list means all
// columns.
inline double max_pairwise_mahalanobis(const CovariateTable& table,
                                       const std::vector<int>& assignment,
                                       int n_groups,
                                       std::span<const std::string> criterion_columns = {}) {
  if (assignment.size() != static_cast<std::size_t>(table.n_units()))
    throw std::invalid_argument("assignment length does not match table");
  const CovariateTable sub = criterion_columns.empty()
                                 ? table
                                 : subset_columns(table, criterion_columns);
  const FullSampleStats full = full_sample_stats(sub);
  const Eigen::MatrixXd s_inv =
      detail::psd_inverse(full.covariance, 1e-12, "criterion covariance");

  const auto k = sub.n_covariates();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(n_groups, k);
  std::vector<int> counts(static_cast<std::size_t>(n_groups), 0);
  for (Eigen::Index i = 0; i < sub.n_units(); ++i) {
    const int g = assignment[static_cast<std::size_t>(i)];
    if (g < 0 || g >= n_groups)
      throw std::invalid_argument("assignment contains an out-of-range group");
    means.row(g) += sub.values.row(i);
    ++counts[static_cast<std::size_t>(g)];
  }
  for (int g = 0; g < n_groups; ++g) {
    if (counts[static_cast<std::size_t>(g)] == 0)
      throw std::invalid_argument("group " + std::to_string(g + 1) + " is empty");
    means.row(g) /= static_cast<double>(counts[static_cast<std::size_t>(g)]);
  }

  double worst = 0.0;
  for (int a = 0; a < n_groups; ++a)
    for (int b = a + 1; b < n_groups; ++b) {
      const Eigen::VectorXd d = (means.row(a) - means.row(b)).transpose();
      const double na = counts[static_cast<std::size_t>(a)];
      const double nb = counts[static_cast<std::size_t>(b)];
      const double m = (na * nb / (na + nb)) * d.dot(s_inv * d);
      worst = std::max(worst, m);
    }
  return worst;
}

struct RerandSpec {
  double acceptance_rate = 0.001;
  std::vector<std::string> criterion_columns;  // empty = all columns
  int pilot_draws = 10000;
  long max_attempts = 10000000;
  std::optional<double> threshold;  // skip pilot calibration when set
};

// Pilot-based threshold: the k-th smallest criterion value over pilot_draws
// completely randomized draws, k = max(1, floor(acceptance_rate * draws)).
inline double rerand_threshold(const CovariateTable& table, const DesignSpec& spec,
                               const RerandSpec& rr, RngStream& rng) {
  if (!(rr.acceptance_rate > 0.0) || rr.acceptance_rate > 1.0)
    throw std::invalid_argument("acceptance rate must be in (0, 1]");
  if (rr.pilot_draws < 1) throw std::invalid_argument("pilot draw count must be >= 1");
  auto prng = rng.child("pilot");
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(rr.pilot_draws));
  for (int i = 0; i < rr.pilot_draws; ++i) {
    const AssignmentResult a = crd(table, spec, prng);
    ms.push_back(max_pairwise_mahalanobis(table, a.assignment, spec.n_groups(),
                                          rr.criterion_columns));
  }
  const auto k = static_cast<std::size_t>(
      std::max(1.0, std::floor(rr.acceptance_rate * rr.pilot_draws)));
  std::nth_element(ms.begin(), ms.begin() + static_cast<std::ptrdiff_t>(k - 1), ms.end());
  return ms[k - 1];
}

struct RerandResult {
  AssignmentResult result;
  double threshold = 0.0;
  long attempts = 0;
};

// Rejection sampling: completely randomized draws until the criterion is at
// most the threshold (calibrating the threshold first when not supplied).
inline RerandResult rerandomize(const CovariateTable& table, const DesignSpec& spec,
                                const RerandSpec& rr, RngStream& rng) {
  spec.validate(table.n_units());
  RerandResult out;
  out.threshold = rr.threshold ? *rr.threshold : rerand_threshold(table, spec, rr, rng);
  auto drng = rng.child("draws");
  for (long attempt = 1; attempt <= rr.max_attempts; ++attempt) {
    AssignmentResult a = crd(table, spec, drng);
    const double m = max_pairwise_mahalanobis(table, a.assignment, spec.n_groups(),
                                              rr.criterion_columns);
    if (m <= out.threshold) {
      out.result = std::move(a);
      out.attempts = attempt;
      return out;
    }
  }
  throw std::runtime_error("rerandomization gave up after " +
                           std::to_string(rr.max_attempts) +
                           " attempts; threshold " + std::to_string(out.threshold) +
                           " may be too tight");
}

}  // namespace fsm
