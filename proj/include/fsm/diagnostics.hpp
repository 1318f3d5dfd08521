#pragma once

// Balance diagnostics: absolute standardized mean differences on raw and
// polynomially expanded covariates, Frobenius gaps between group correlation
// or covariance matrices, and aggregation of these metrics over many draws
// of a design.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/data.hpp"

namespace fsm {

namespace detail {

struct GroupMoments {
  double mean = 0.0;
  double var = 0.0;  // sample (n-1) variance
  int n = 0;
};

inline GroupMoments column_moments(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const std::vector<int>& assignment, int g) {
  GroupMoments m;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (assignment[static_cast<std::size_t>(i)] == g) {
      sum += x[i];
      ++m.n;
    }
  if (m.n == 0) throw std::invalid_argument("group " + std::to_string(g + 1) + " is empty");
  m.mean = sum / m.n;
  if (m.n > 1) {
    double ss = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (assignment[static_cast<std::size_t>(i)] == g) {
        const double d = x[i] - m.mean;
        ss += d * d;
      }
    m.var = ss / (m.n - 1);
  }
  return m;
}

// Linear-interpolation quantile (R type 7) of already sorted values.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

// |mean_g1 - mean_g2| / sqrt((var_g1 + var_g2)/2) with sample variances.
// A degenerate denominator gives 0 when the means agree, infinity otherwise.
inline double asmd(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const std::vector<int>& assignment, int g1, int g2) {
  if (assignment.size() != static_cast<std::size_t>(x.size()))
    throw std::invalid_argument("assignment length does not match column");
  const auto m1 = detail::column_moments(x, assignment, g1);
  const auto m2 = detail::column_moments(x, assignment, g2);
  const double gap = std::abs(m1.mean - m2.mean);
  const double denom = std::sqrt((m1.var + m2.var) / 2.0);
  if (denom == 0.0)
    return gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return gap / denom;
}

// Polynomial expansion of the table: products of column pairs (a < b) plus
// squares of the continuous (non-binary) columns; order 3 adds the analogous
// triples, excluding any term that raises a binary column to a power above
// one (such terms duplicate lower-order ones). Empty column list means all
// columns. With demean set, each factor is shifted by its full-sample mean
// before multiplying; otherwise raw values are multiplied. The two are not
// interchangeable: demeaning removes the part of each product that moves
// linearly with the factors, so downstream balance numbers differ.
inline CovariateTable second_order_expand(const CovariateTable& table,
                                          std::span<const std::string> columns = {},
                                          int order = 2, bool demean = true) {
  if (order != 2 && order != 3)
    throw std::invalid_argument("expansion order must be 2 or 3");
  std::vector<std::string> names(columns.begin(), columns.end());
  if (names.empty()) names = table.columns;
  const auto p = names.size();
  std::vector<Eigen::Index> idx;
  for (const auto& nm : names) idx.push_back(table.column_index(nm));

  Eigen::MatrixXd centered(table.n_units(), static_cast<Eigen::Index>(p));
  std::vector<bool> scaled;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = table.values.col(idx[j]);
    centered.col(static_cast<Eigen::Index>(j)) =
        demean ? (col.array() - col.mean()).matrix().eval() : col.eval();
    scaled.push_back(table.scaled_mask[static_cast<std::size_t>(idx[j])]);
  }

  std::vector<Eigen::VectorXd> out_cols;
  std::vector<std::string> out_names;
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a; b < p; ++b) {
      if (a == b && !scaled[a]) continue;  // binary squared is the column itself
      out_cols.push_back(centered.col(static_cast<Eigen::Index>(a)).cwiseProduct(
          centered.col(static_cast<Eigen::Index>(b))));
      out_names.push_back(a == b ? names[a] + "^2" : names[a] + "*" + names[b]);
    }
  if (order == 3) {
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = a; b < p; ++b)
        for (std::size_t c = b; c < p; ++c) {
          bool binary_power = false;  // binary column raised past power one?
          if (a == b && !scaled[a]) binary_power = true;
          if (b == c && !scaled[b]) binary_power = true;
          if (binary_power) continue;
          Eigen::VectorXd v = centered.col(static_cast<Eigen::Index>(a))
                                  .cwiseProduct(centered.col(static_cast<Eigen::Index>(b)))
                                  .cwiseProduct(centered.col(static_cast<Eigen::Index>(c)));
          std::string nm;
          if (a == b && b == c) {
            nm = names[a] + "^3";
          } else if (a == b) {
            nm = names[a] + "^2*" + names[c];
          } else if (b == c) {
            nm = names[a] + "*" + names[b] + "^2";
          } else {
            nm = names[a] + "*" + names[b] + "*" + names[c];
          }
          out_cols.push_back(std::move(v));
          out_names.push_back(std::move(nm));
        }
  }
  if (out_cols.empty())
    throw std::invalid_argument("expansion produced no columns");
  Eigen::MatrixXd vals(table.n_units(), static_cast<Eigen::Index>(out_cols.size()));
  for (std::size_t j = 0; j < out_cols.size(); ++j)
    vals.col(static_cast<Eigen::Index>(j)) = out_cols[j];
  return make_covariate_table(std::move(vals), std::move(out_names), table.unit_ids);
}

enum class FrobeniusMode { kCorrelation, kCovariance };

// Frobenius norm of the difference between the two groups' sample covariance
// or correlation matrices. A zero-variance column contributes identity
// diagonal and zero off-diagonals in correlation mode.
inline double frobenius_gap(const CovariateTable& table,
                            const std::vector<int>& assignment, int g1, int g2,
                            FrobeniusMode mode) {
  if (assignment.size() != static_cast<std::size_t>(table.n_units()))
    throw std::invalid_argument("assignment length does not match table");
  const auto k = table.n_covariates();
  auto group_matrix = [&](int g) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < table.n_units(); ++i)
      if (assignment[static_cast<std::size_t>(i)] == g) rows.push_back(i);
    if (rows.size() < 2)
      throw std::invalid_argument("group " + std::to_string(g + 1) +
                                  " needs at least 2 units for a covariance matrix");
    Eigen::MatrixXd xg(static_cast<Eigen::Index>(rows.size()), k);
    for (std::size_t r = 0; r < rows.size(); ++r) xg.row(static_cast<Eigen::Index>(r)) = table.values.row(rows[r]);
    const Eigen::RowVectorXd mean = xg.colwise().mean();
    xg.rowwise() -= mean;
    Eigen::MatrixXd cov =
        xg.transpose() * xg / static_cast<double>(rows.size() - 1);
    if (mode == FrobeniusMode::kCovariance) return cov;
    Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) {
        if (a == b) continue;
        corr(a, b) = (sd[a] > 0.0 && sd[b] > 0.0) ? cov(a, b) / (sd[a] * sd[b]) : 0.0;
      }
    return corr;
  };
  return (group_matrix(g1) - group_matrix(g2)).norm();
}

struct BalanceConfig {
  std::vector<std::string> main_columns;  // empty = all table columns
  bool second_order = false;
  int expand_order = 2;
  bool demean_expansion = true;  // false reproduces raw product/square tables
  bool frobenius = false;
};

struct BalanceRecord {
  int draw = 0;  // 0-based
  std::string metric;
  int g1 = 0, g2 = 0;
  std::string column;  // empty for matrix metrics
  double value = 0.0;
};

struct DistSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

inline DistSummary summarize_values(std::vector<double> v) {
  DistSummary d;
  if (v.empty()) {
    d.min = d.q1 = d.median = d.q3 = d.max = d.mean =
        std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  std::sort(v.begin(), v.end());
  d.min = v.front();
  d.max = v.back();
  d.q1 = detail::sorted_quantile(v, 0.25);
  d.median = detail::sorted_quantile(v, 0.5);
  d.q3 = detail::sorted_quantile(v, 0.75);
  d.mean = 0.0;
  for (double x : v) d.mean += x;
  d.mean /= static_cast<double>(v.size());
  return d;
}

struct BalanceReport {
  int n_draws = 0;
  int n_groups = 0;
  std::vector<std::string> main_columns;
  std::vector<double> asmd_main_by_column;  // mean over draws and pairs
  double asmd_main_mean = 0.0;              // mean over columns as well
  std::vector<std::string> second_order_columns;
  std::vector<double> asmd_second_by_column;
  double asmd_second_mean = std::numeric_limits<double>::quiet_NaN();
  DistSummary asmd_main_dist;    // pooled over draws, pairs, columns
  DistSummary asmd_second_dist;
  DistSummary frob_corr_dist;    // pooled over draws and pairs
  DistSummary frob_cov_dist;
};

// Raw per-draw balance metrics in long form.
inline std::vector<BalanceRecord> balance_records(
    const CovariateTable& table, const std::vector<std::vector<int>>& draws,
    int n_groups, const BalanceConfig& config) {
  if (n_groups < 2) throw std::invalid_argument("need at least two groups");
  std::vector<std::string> main_cols =
      config.main_columns.empty() ? table.columns : config.main_columns;
  const CovariateTable main_table = subset_columns(table, main_cols);
  CovariateTable expanded;
  if (config.second_order)
    expanded = second_order_expand(table, main_cols, config.expand_order,
                                   config.demean_expansion);

  std::vector<BalanceRecord> records;
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const auto& z = draws[d];
    for (int a = 0; a < n_groups; ++a)
      for (int b = a + 1; b < n_groups; ++b) {
        for (Eigen::Index j = 0; j < main_table.n_covariates(); ++j)
          records.push_back({static_cast<int>(d), "asmd", a, b,
                             main_table.columns[static_cast<std::size_t>(j)],
                             asmd(main_table.values.col(j), z, a, b)});
        if (config.second_order)
          for (Eigen::Index j = 0; j < expanded.n_covariates(); ++j)
            records.push_back({static_cast<int>(d), "asmd2", a, b,
                               expanded.columns[static_cast<std::size_t>(j)],
                               asmd(expanded.values.col(j), z, a, b)});
        if (config.frobenius) {
          records.push_back({static_cast<int>(d), "frob_corr", a, b, "",
                             frobenius_gap(main_table, z, a, b,
                                           FrobeniusMode::kCorrelation)});
          records.push_back({static_cast<int>(d), "frob_cov", a, b, "",
                             frobenius_gap(main_table, z, a, b,
                                           FrobeniusMode::kCovariance)});
        }
      }
  }
  return records;
}

inline BalanceReport summarize_draws(const CovariateTable& table,
                                     const std::vector<std::vector<int>>& draws,
                                     int n_groups, const BalanceConfig& config) {
  const auto records = balance_records(table, draws, n_groups, config);
  BalanceReport rep;
  rep.n_draws = static_cast<int>(draws.size());
  rep.n_groups = n_groups;
  rep.main_columns = config.main_columns.empty() ? table.columns : config.main_columns;
  if (config.second_order)
    rep.second_order_columns =
        second_order_expand(table, rep.main_columns, config.expand_order,
                            config.demean_expansion)
            .columns;

  auto column_means = [&](const std::string& metric,
                          const std::vector<std::string>& cols,
                          std::vector<double>& by_col, double& overall,
                          DistSummary& dist) {
    std::vector<double> pooled;
    by_col.assign(cols.size(), 0.0);
    std::vector<long> counts(cols.size(), 0);
    for (const auto& r : records) {
      if (r.metric != metric) continue;
      pooled.push_back(r.value);
      for (std::size_t j = 0; j < cols.size(); ++j)
        if (cols[j] == r.column) {
          by_col[j] += r.value;
          ++counts[j];
          break;
        }
    }
    for (std::size_t j = 0; j < cols.size(); ++j)
      by_col[j] = counts[j] ? by_col[j] / static_cast<double>(counts[j])
                            : std::numeric_limits<double>::quiet_NaN();
    overall = pooled.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    for (double v : pooled) overall += v;
    if (!pooled.empty()) overall /= static_cast<double>(pooled.size());
    dist = summarize_values(std::move(pooled));
  };

  column_means("asmd", rep.main_columns, rep.asmd_main_by_column,
               rep.asmd_main_mean, rep.asmd_main_dist);
  if (config.second_order)
    column_means("asmd2", rep.second_order_columns, rep.asmd_second_by_column,
                 rep.asmd_second_mean, rep.asmd_second_dist);
  if (config.frobenius) {
    std::vector<double> corr, cov;
    for (const auto& r : records) {
      if (r.metric == "frob_corr") corr.push_back(r.value);
      if (r.metric == "frob_cov") cov.push_back(r.value);
    }
    rep.frob_corr_dist = summarize_values(std::move(corr));
    rep.frob_cov_dist = summarize_values(std::move(cov));
  }
  return rep;
}

}  // namespace fsm
