#pragma once

// Randomization inference: Monte-Carlo tests of the sharp null that
// re-randomize the actual design, model-assisted effect estimation through
// per-group regressions, design standard errors over repeated draws, and
// constant-shift confidence machinery built on the same test.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/data.hpp"
#include "fsm/parallel.hpp"
#include "fsm/sampler.hpp"

namespace fsm {

// mean(y | group g1) - mean(y | group g2).
inline double diff_in_means(const Eigen::Ref<const Eigen::VectorXd>& y,
                            const std::vector<int>& assignment, int g1, int g2) {
  if (assignment.size() != static_cast<std::size_t>(y.size()))
    throw std::invalid_argument("assignment length does not match outcomes");
  double s1 = 0, s2 = 0;
  long n1 = 0, n2 = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const int g = assignment[static_cast<std::size_t>(i)];
    if (g == g1) {
      s1 += y[i];
      ++n1;
    } else if (g == g2) {
      s2 += y[i];
      ++n2;
    }
  }
  if (n1 == 0 || n2 == 0)
    throw std::invalid_argument("diff_in_means: a group is empty");
  return s1 / static_cast<double>(n1) - s2 / static_cast<double>(n2);
}

enum class TestStatistic { kAbsDiffInMeans, kStudentized };

inline const char* statistic_name(TestStatistic s) {
  return s == TestStatistic::kAbsDiffInMeans ? "abs_diff_in_means" : "studentized";
}

// |difference in means|, optionally studentized by sqrt(s1^2/n1 + s2^2/n2).
inline double test_statistic(TestStatistic stat,
                             const Eigen::Ref<const Eigen::VectorXd>& y,
                             const std::vector<int>& assignment, int g1, int g2) {
  const double diff = diff_in_means(y, assignment, g1, g2);
  if (stat == TestStatistic::kAbsDiffInMeans) return std::abs(diff);
  double m1 = 0, m2 = 0, ss1 = 0, ss2 = 0;
  long n1 = 0, n2 = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const int g = assignment[static_cast<std::size_t>(i)];
    if (g == g1) {
      ++n1;
      m1 += y[i];
    } else if (g == g2) {
      ++n2;
      m2 += y[i];
    }
  }
  m1 /= static_cast<double>(n1);
  m2 /= static_cast<double>(n2);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const int g = assignment[static_cast<std::size_t>(i)];
    if (g == g1) ss1 += (y[i] - m1) * (y[i] - m1);
    if (g == g2) ss2 += (y[i] - m2) * (y[i] - m2);
  }
  if (n1 < 2 || n2 < 2)
    throw std::invalid_argument("studentized statistic needs >= 2 units per group");
  const double se = std::sqrt(ss1 / (n1 - 1) / n1 + ss2 / (n2 - 1) / n2);
  if (se == 0.0)
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(diff) / se;
}

struct TestResult {
  double t_obs = 0.0;
  double p_value = 0.0;
  int n_replicates = 0;
  std::vector<double> replicate_stats;
};

// Monte-Carlo randomization test of the sharp null of no effect between
// groups g1 and g2: replicates redraw assignments from the same design with
// outcomes held fixed. p is the plain proportion of replicate statistics at
// or above the observed one; add_one switches to (count+1)/(M+1).
inline TestResult randomization_test(const CovariateTable& table,
                                     const Design& design,
                                     const Eigen::Ref<const Eigen::VectorXd>& y,
                                     const std::vector<int>& observed_assignment,
                                     TestStatistic stat, int n_replicates,
                                     RngStream& rng, int threads = 1,
                                     bool add_one = false, int g1 = 0, int g2 = 1) {
  if (n_replicates < 1) throw std::invalid_argument("need at least one replicate");
  TestResult res;
  res.t_obs = test_statistic(stat, y, observed_assignment, g1, g2);
  res.n_replicates = n_replicates;
  res.replicate_stats.resize(static_cast<std::size_t>(n_replicates));
  parallel_for(static_cast<std::size_t>(n_replicates), threads, [&](std::size_t m) {
    auto mrng = rng.child("replicate", m);
    const AssignmentResult a = draw_assignment(table, design, mrng);
    res.replicate_stats[m] = test_statistic(stat, y, a.assignment, g1, g2);
  });
  long count = 0;
  for (double t : res.replicate_stats)
    if (t >= res.t_obs) ++count;
  res.p_value = add_one
                    ? (static_cast<double>(count) + 1.0) / (n_replicates + 1.0)
                    : static_cast<double>(count) / n_replicates;
  return res;
}

struct RegressionEstimate {
  double estimate = 0.0;
  double se = 0.0;  // classical homoskedastic, from the two independent fits
  Eigen::VectorXd beta_g1, beta_g2;
};

// Model-assisted estimate: fit y ~ [1, basis] separately in groups g1 and g2
// by least squares and contrast the fits at the full-sample mean basis row.
// The reported SE treats the two fits as independent with homoskedastic
// errors (sigma_g^2 from each group's residuals).
inline RegressionEstimate regression_imputation(
    const CovariateTable& table, const std::vector<int>& assignment,
    const Eigen::Ref<const Eigen::VectorXd>& y,
    std::span<const std::string> basis_columns, int g1, int g2) {
  if (assignment.size() != static_cast<std::size_t>(table.n_units()) ||
      y.size() != table.n_units())
    throw std::invalid_argument("table, assignment and outcomes disagree on length");
  std::vector<Eigen::Index> idx;
  for (const auto& nm : basis_columns) idx.push_back(table.column_index(nm));
  const auto b = static_cast<Eigen::Index>(idx.size()) + 1;

  Eigen::VectorXd basis_mean(b);
  basis_mean[0] = 1.0;
  for (std::size_t j = 0; j < idx.size(); ++j)
    basis_mean[static_cast<Eigen::Index>(j) + 1] = table.values.col(idx[j]).mean();

  struct Fit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtx_inv;
    double sigma2 = 0.0;
  };
  auto fit_group = [&](int g) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < table.n_units(); ++i)
      if (assignment[static_cast<std::size_t>(i)] == g) rows.push_back(i);
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (n <= b)
      throw std::invalid_argument("group " + std::to_string(g + 1) + " has " +
                                  std::to_string(n) + " units; need more than " +
                                  std::to_string(b) + " for the basis fit");
    Eigen::MatrixXd bx(n, b);
    Eigen::VectorXd by(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      bx(r, 0) = 1.0;
      for (std::size_t j = 0; j < idx.size(); ++j)
        bx(r, static_cast<Eigen::Index>(j) + 1) = table.values(rows[static_cast<std::size_t>(r)], idx[j]);
      by[r] = y[rows[static_cast<std::size_t>(r)]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bx);
    if (qr.rank() < b)
      throw std::runtime_error("basis is collinear within group " + std::to_string(g + 1));
    Fit f;
    f.beta = qr.solve(by);
    const Eigen::VectorXd resid = by - bx * f.beta;
    f.sigma2 = resid.squaredNorm() / static_cast<double>(n - b);
    f.xtx_inv = (bx.transpose() * bx).ldlt().solve(
        Eigen::MatrixXd::Identity(b, b));
    return f;
  };

  const Fit f1 = fit_group(g1);
  const Fit f2 = fit_group(g2);
  RegressionEstimate est;
  est.beta_g1 = f1.beta;
  est.beta_g2 = f2.beta;
  est.estimate = (f1.beta - f2.beta).dot(basis_mean);
  const double var = basis_mean.dot(
      (f1.sigma2 * f1.xtx_inv + f2.sigma2 * f2.xtx_inv) * basis_mean);
  est.se = std::sqrt(std::max(0.0, var));
  return est;
}

struct DesignDistribution {
  double mean = 0.0;
  double sd = 0.0;  // sample (R-1) standard deviation
  std::vector<double> draws;
};

// Distribution of the g1-g2 difference in means over repeated draws of a
// design, with observed outcomes read off a fixed potential-outcome matrix
// (column g is the outcome a unit reveals under group g).
inline DesignDistribution randomization_se(const CovariateTable& table,
                                           const Design& design,
                                           const Eigen::MatrixXd& potentials,
                                           int n_draws, RngStream& rng,
                                           int threads = 1, int g1 = 0, int g2 = 1) {
  if (potentials.rows() != table.n_units())
    throw std::invalid_argument("potential outcomes do not match table");
  if (potentials.cols() < design.spec.n_groups())
    throw std::invalid_argument("potential outcomes need one column per group");
  if (n_draws < 2) throw std::invalid_argument("need at least two draws");
  DesignDistribution out;
  out.draws.resize(static_cast<std::size_t>(n_draws));
  parallel_for(static_cast<std::size_t>(n_draws), threads, [&](std::size_t r) {
    auto rrng = rng.child("draw", r);
    const AssignmentResult a = draw_assignment(table, design, rrng);
    Eigen::VectorXd y(table.n_units());
    for (Eigen::Index i = 0; i < table.n_units(); ++i)
      y[i] = potentials(i, a.assignment[static_cast<std::size_t>(i)]);
    out.draws[r] = diff_in_means(y, a.assignment, g1, g2);
  });
  double sum = 0.0;
  for (double v : out.draws) sum += v;
  out.mean = sum / static_cast<double>(n_draws);
  double ss = 0.0;
  for (double v : out.draws) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(n_draws - 1));
  return out;
}

// ---- constant-shift machinery (two groups) --------------------------------
//
// Under the hypothesis that group g1 shifts outcomes by tau relative to g2,
// both potential outcomes are imputable from the observed data; replicate
// assignments (shared across tau through fixed child streams) then give a
// p-value for each tau, a Hodges-Lehmann style point estimate, and a test
// inversion confidence interval.

namespace detail {

struct ShiftReplicates {
  std::vector<std::vector<int>> assignments;
};

inline ShiftReplicates make_shift_replicates(const CovariateTable& table,
                                             const Design& design, int m,
                                             RngStream& rng, int threads) {
  ShiftReplicates reps;
  reps.assignments.resize(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t i) {
    auto mrng = rng.child("shift_replicate", i);
    reps.assignments[i] = draw_assignment(table, design, mrng).assignment;
  });
  return reps;
}

// Observed outcome vector implied by assignment z under the tau-shift null,
// starting from the baseline (g2) potentials y0.
inline Eigen::VectorXd shift_outcomes(const Eigen::VectorXd& y0,
                                      const std::vector<int>& z, int g1,
                                      double tau) {
  Eigen::VectorXd y = y0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (z[static_cast<std::size_t>(i)] == g1) y[i] += tau;
  return y;
}

}  // namespace detail

class ShiftTest {
 public:
  ShiftTest(const CovariateTable& table, const Design& design,
            const Eigen::Ref<const Eigen::VectorXd>& y_obs,
            const std::vector<int>& observed_assignment, int n_replicates,
            RngStream& rng, int threads = 1, int g1 = 0, int g2 = 1)
      : y_obs_(y_obs),
        z_obs_(observed_assignment),
        g1_(g1),
        g2_(g2),
        reps_(detail::make_shift_replicates(table, design, n_replicates, rng,
                                            threads)) {
    if (design.spec.n_groups() != 2)
      throw std::invalid_argument("constant-shift machinery handles two groups");
  }

  // Two-sided p-value for the tau-shift sharp null.
  double p_value(double tau) const {
    const Eigen::VectorXd y0 = baseline(tau);
    const double t_obs =
        std::abs(diff_in_means(y_obs_, z_obs_, g1_, g2_) - tau);
    long count = 0;
    for (const auto& z : reps_.assignments) {
      const Eigen::VectorXd y = detail::shift_outcomes(y0, z, g1_, tau);
      if (std::abs(diff_in_means(y, z, g1_, g2_) - tau) >= t_obs) ++count;
    }
    return static_cast<double>(count) /
           static_cast<double>(reps_.assignments.size());
  }

  // Root of (observed diff - tau) - mean(replicate diffs under tau): the
  // estimating-equation analogue of the Hodges-Lehmann estimate. The function
  // is strictly decreasing in tau, so bisection is safe.
  double estimate(double tol = 1e-8) const {
    auto f = [&](double tau) {
      const Eigen::VectorXd y0 = baseline(tau);
      double mean = 0.0;
      for (const auto& z : reps_.assignments) {
        const Eigen::VectorXd y = detail::shift_outcomes(y0, z, g1_, tau);
        mean += diff_in_means(y, z, g1_, g2_);
      }
      mean /= static_cast<double>(reps_.assignments.size());
      return (diff_in_means(y_obs_, z_obs_, g1_, g2_) - tau) - (mean - tau);
    };
    const double d_obs = diff_in_means(y_obs_, z_obs_, g1_, g2_);
    const double scale = std::max(1.0, std::abs(d_obs));
    double lo = d_obs - scale, hi = d_obs + scale;
    while (f(lo) < 0.0) lo -= scale;
    while (f(hi) > 0.0) hi += scale;
    while (hi - lo > tol * scale) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  // Test-inversion interval {tau : p(tau) > alpha}, located by bisection
  // outward from the point estimate.
  std::pair<double, double> confidence_interval(double alpha = 0.05,
                                                double tol = 1e-6) const {
    const double center = estimate();
    const double scale =
        std::max(1.0, std::abs(diff_in_means(y_obs_, z_obs_, g1_, g2_)));
    auto edge = [&](double direction) {
      double inside = center, outside = center + direction * scale;
      while (p_value(outside) > alpha) {
        inside = outside;
        outside += direction * scale;
        if (std::abs(outside - center) > 1e6 * scale)
          return direction < 0 ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
      }
      while (std::abs(outside - inside) > tol * scale) {
        const double mid = 0.5 * (inside + outside);
        (p_value(mid) > alpha ? inside : outside) = mid;
      }
      return 0.5 * (inside + outside);
    };
    return {edge(-1.0), edge(+1.0)};
  }

 private:
  Eigen::VectorXd baseline(double tau) const {
    Eigen::VectorXd y0 = y_obs_;
    for (Eigen::Index i = 0; i < y0.size(); ++i)
      if (z_obs_[static_cast<std::size_t>(i)] == g1_) y0[i] -= tau;
    return y0;
  }

  Eigen::VectorXd y_obs_;
  std::vector<int> z_obs_;
  int g1_, g2_;
  detail::ShiftReplicates reps_;
};

}  // namespace fsm
