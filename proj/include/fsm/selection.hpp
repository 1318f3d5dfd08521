#pragma once

// Per-stage unit scoring and selection. A group picking its next unit scores
// every unit left in the pool and takes the maximizer; near-ties within a
// relative tolerance are broken uniformly at random.
//
// D-optimal scoring is a squared Mahalanobis-type distance from the group's
// current covariate distribution, with three regimes per stage:
//   empty  group has no units: distance from the full-sample mean under the
//          full-sample covariance, so the first pick is the most outlying
//          unit overall;
//   ridge  group has units but its design cross-product is singular (always
//          true while count < k+1): the group's moments are blended with an
//          epsilon fraction of the full-sample moments, which is exactly the
//          criterion obtained by appending the sqrt(epsilon/N)-weighted full
//          design to the group design;
//   pure   the group design has full column rank: distance from the group
//          mean under the group's divide-by-count covariance, equivalent to
//          maximizing det([1 X]'[1 X]) of the augmented group design.
//
// A-optimal scoring targets prediction variance at a weighted policy set
// (rows of P with weights w): it maximizes the decrease of
// trace(P'WP (X'X)^-1) where X is the augmented group design, and falls back
// to the D-optimal empty/ridge rules while the group design is singular.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fsm/data.hpp"
#include "fsm/design.hpp"
#include "fsm/rng.hpp"

namespace fsm {

enum class Regime { kEmpty, kRidge, kPure, kNone };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kEmpty: return "empty";
    case Regime::kRidge: return "ridge";
    case Regime::kPure: return "pure";
    case Regime::kNone: return "none";
  }
  return "none";
}

// Running covariate moments of one treatment group. design_cross is the
// unnormalized [1 X]'[1 X] of the group's augmented design; sum/scatter_sum
// are its blocks and are kept separately for direct access.
struct GroupState {
  int group = 0;
  Eigen::VectorXd sum;           // k
  Eigen::MatrixXd scatter_sum;   // k x k
  Eigen::MatrixXd design_cross;  // (k+1) x (k+1)
  std::vector<int> units;        // pick order

  static GroupState empty(int group, Eigen::Index k) {
    GroupState s;
    s.group = group;
    s.sum = Eigen::VectorXd::Zero(k);
    s.scatter_sum = Eigen::MatrixXd::Zero(k, k);
    s.design_cross = Eigen::MatrixXd::Zero(k + 1, k + 1);
    return s;
  }

  Eigen::Index n_covariates() const { return sum.size(); }
  long long count() const { return static_cast<long long>(units.size()); }

  Eigen::VectorXd mean() const {
    if (units.empty()) throw std::logic_error("mean of an empty group");
    return sum / static_cast<double>(units.size());
  }
};

// Rank-one update with one unit's covariate row.
inline void update_state(GroupState& state, int unit,
                         const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != state.sum.size())
    throw std::invalid_argument("covariate dimension mismatch in state update");
  state.units.push_back(unit);
  state.sum += x;
  state.scatter_sum += x * x.transpose();
  const Eigen::Index k = x.size();
  state.design_cross(0, 0) += 1.0;
  state.design_cross.block(0, 1, 1, k) += x.transpose();
  state.design_cross.block(1, 0, k, 1) += x;
  state.design_cross.block(1, 1, k, k) += x * x.transpose();
}

namespace detail {

// Symmetric PSD inverse through an eigendecomposition; relative cutoff guards
// against numerically singular matrices.
inline Eigen::MatrixXd psd_inverse(const Eigen::MatrixXd& m, double rel_tol,
                                   const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error(std::string("eigendecomposition failed for ") + what);
  const auto& ev = eig.eigenvalues();
  const double lmax = ev.cwiseAbs().maxCoeff();
  if (!(lmax > 0.0) || ev.minCoeff() <= rel_tol * lmax)
    throw std::runtime_error(std::string(what) +
                             " is singular: check for constant or collinear columns");
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

inline bool full_rank(const Eigen::MatrixXd& sym, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) return false;
  const auto& ev = eig.eigenvalues();
  const double lmax = ev.cwiseAbs().maxCoeff();
  return lmax > 0.0 && ev.minCoeff() > rel_tol * lmax;
}

}  // namespace detail

// Precomputes one stage's scoring function for a given group state. Building
// the scorer factors the stage matrix once; score() is then a quadratic form
// per candidate.
class StageScorer {
 public:
  StageScorer(const GroupState& state, const FullSampleStats& full,
              const DesignSpec& spec)
      : method_(spec.selection) {
    const Eigen::Index k = state.n_covariates();
    if (full.mean.size() != k)
      throw std::invalid_argument("state and full-sample stats disagree on dimension");

    if (method_ == SelectionMethod::kRandom) {
      regime_ = Regime::kNone;
      return;
    }

    const long long n = state.count();
    const bool have_rank =
        n >= k + 1 && detail::full_rank(state.design_cross, spec.rank_tolerance);

    if (method_ == SelectionMethod::kAOptimal && have_rank) {
      regime_ = Regime::kPure;
      aopt_ = true;
      const Eigen::MatrixXd t =
          spec.aopt ? spec.aopt->t() : aopt_identity_policy(k).t();
      if (t.rows() != k + 1 || t.cols() != k + 1)
        throw std::invalid_argument("A-opt policy matrix has wrong dimension");
      m_inv_ = detail::psd_inverse(state.design_cross, spec.rank_tolerance,
                                   "group design cross-product");
      ratio_num_ = m_inv_ * t * m_inv_;
      return;
    }

    // D-optimal scoring; also the A-opt fallback for empty/singular states.
    if (n == 0) {
      regime_ = Regime::kEmpty;
      center_ = full.mean;
      sstar_inv_ = detail::psd_inverse(full.covariance, 1e-12,
                                       "full-sample covariance");
    } else if (!have_rank) {
      regime_ = Regime::kRidge;
      const double eps = spec.epsilon;
      const Eigen::VectorXd group_mean = state.sum / static_cast<double>(n);
      center_ = (group_mean + eps * full.mean) / (1.0 + eps);
      const Eigen::MatrixXd mixed = state.scatter_sum / static_cast<double>(n) +
                                    eps * full.scatter -
                                    (1.0 + eps) * center_ * center_.transpose();
      sstar_inv_ = detail::psd_inverse(mixed, 1e-12, "ridge-mixed covariance");
    } else {
      regime_ = Regime::kPure;
      center_ = state.sum / static_cast<double>(n);
      const Eigen::MatrixXd cov = state.scatter_sum / static_cast<double>(n) -
                                  center_ * center_.transpose();
      sstar_inv_ = detail::psd_inverse(cov, 1e-12, "group covariance");
    }
  }

  Regime regime() const { return regime_; }

  double score(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (method_ == SelectionMethod::kRandom) return 0.0;
    if (aopt_) {
      Eigen::VectorXd v(x.size() + 1);
      v[0] = 1.0;
      v.tail(x.size()) = x;
      const double num = v.dot(ratio_num_ * v);
      const double den = 1.0 + v.dot(m_inv_ * v);
      return num / den;
    }
    const Eigen::VectorXd d = x - center_;
    return d.dot(sstar_inv_ * d);
  }

 private:
  SelectionMethod method_;
  Regime regime_ = Regime::kNone;
  bool aopt_ = false;
  Eigen::VectorXd center_;
  Eigen::MatrixXd sstar_inv_;
  Eigen::MatrixXd m_inv_, ratio_num_;
};

// Convenience single-candidate entry points (the engine uses StageScorer
// directly so the per-stage factorization is shared across the pool).
inline double dopt_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const GroupState& state, const FullSampleStats& full,
                         const DesignSpec& spec) {
  DesignSpec s = spec;
  s.selection = SelectionMethod::kDOptimal;
  return StageScorer(state, full, s).score(x);
}

// Determinant-form objective for a full-rank group design: the quadratic form
// (1,x') M^-1 (1,x')' with M = [1 X]'[1 X]. Appending unit x multiplies
// det(M) by exactly (1 + this value), so ranking by it ranks by the updated
// determinant.
inline double dopt_score_det(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const GroupState& state, double rank_tol = 1e-9) {
  const Eigen::MatrixXd m_inv =
      detail::psd_inverse(state.design_cross, rank_tol, "group design cross-product");
  Eigen::VectorXd v(x.size() + 1);
  v[0] = 1.0;
  v.tail(x.size()) = x;
  return v.dot(m_inv * v);
}

inline double aopt_score(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const GroupState& state, const AOptPolicy& policy,
                         double rank_tol = 1e-9) {
  const Eigen::MatrixXd m_inv =
      detail::psd_inverse(state.design_cross, rank_tol, "group design cross-product");
  const Eigen::MatrixXd a = m_inv * policy.t() * m_inv;
  Eigen::VectorXd v(x.size() + 1);
  v[0] = 1.0;
  v.tail(x.size()) = x;
  return v.dot(a * v) / (1.0 + v.dot(m_inv * v));
}

// Full audit record of one selection stage.
struct SelectionScorecard {
  int stage = 0;  // 1-based, filled by the engine
  int group = 0;
  Regime regime = Regime::kNone;
  std::vector<std::pair<int, double>> scores;  // (unit, score), pool order
  std::vector<int> tie_set;                    // units within tolerance of the max
  int chosen = -1;
};

// Scores the pool and picks the maximizer; ties within
// tie_tolerance * max(1, |best|) are broken by a single uniform draw over the
// tied units in ascending unit order. Exactly one RNG draw per call no matter
// the tie structure, so replays do not depend on score details. The random
// selection method makes every pool member a tie, which reduces this to a
// uniform pick.
inline SelectionScorecard select_next(const GroupState& state,
                                      const std::vector<int>& pool,
                                      const CovariateTable& table,
                                      const FullSampleStats& full,
                                      const DesignSpec& spec, RngStream& rng) {
  if (pool.empty()) throw std::invalid_argument("selection pool is empty");
  StageScorer scorer(state, full, spec);
  SelectionScorecard card;
  card.group = state.group;
  card.regime = scorer.regime();
  card.scores.reserve(pool.size());
  double best = -std::numeric_limits<double>::infinity();
  for (int u : pool) {
    const double s = scorer.score(table.values.row(u).transpose());
    if (!std::isfinite(s))
      throw std::runtime_error("non-finite selection score for unit " +
                               table.unit_ids[static_cast<std::size_t>(u)]);
    card.scores.emplace_back(u, s);
    if (s > best) best = s;
  }
  const double tol = spec.tie_tolerance * std::max(1.0, std::abs(best));
  for (const auto& [u, s] : card.scores)
    if (s >= best - tol) card.tie_set.push_back(u);
  card.chosen =
      card.tie_set[static_cast<std::size_t>(rng.below(card.tie_set.size()))];
  return card;
}

}  // namespace fsm
