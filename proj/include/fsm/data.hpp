#pragma once

// Covariate table and full-sample moments. The table is the single data
// object the rest of the library consumes: a dense N x k matrix of finite
// values with opaque unit identifiers and named columns. scaled_mask marks
// columns treated as continuous; a column whose values are all 0/1 is
// classified binary at construction and excluded from squared terms in the
// polynomial expansion.

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/csv.hpp"

namespace fsm {

struct CovariateTable {
  std::vector<std::string> unit_ids;  // N, unique
  std::vector<std::string> columns;   // k, unique
  Eigen::MatrixXd values;             // N x k, finite
  std::vector<bool> scaled_mask;      // k, false = binary 0/1 column

  Eigen::Index n_units() const { return values.rows(); }
  Eigen::Index n_covariates() const { return values.cols(); }

  Eigen::Index column_index(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == name) return static_cast<Eigen::Index>(j);
    throw std::invalid_argument("no covariate column named '" + name + "'");
  }
};

namespace detail {

inline bool is_binary_column(const Eigen::VectorXd& col) {
  for (Eigen::Index i = 0; i < col.size(); ++i)
    if (col[i] != 0.0 && col[i] != 1.0) return false;
  return true;
}

inline void validate_table(const CovariateTable& t) {
  const auto n = t.values.rows();
  const auto k = t.values.cols();
  if (n < 1) throw std::invalid_argument("covariate table needs at least one unit");
  if (k < 1) throw std::invalid_argument("covariate table needs at least one column");
  if (static_cast<Eigen::Index>(t.unit_ids.size()) != n)
    throw std::invalid_argument("unit id count does not match row count");
  if (static_cast<Eigen::Index>(t.columns.size()) != k)
    throw std::invalid_argument("column name count does not match column count");
  if (static_cast<Eigen::Index>(t.scaled_mask.size()) != k)
    throw std::invalid_argument("scaled mask length does not match column count");
  if (!t.values.allFinite())
    throw std::invalid_argument("covariate values must be finite");
  std::set<std::string> seen;
  for (const auto& id : t.unit_ids)
    if (!seen.insert(id).second)
      throw std::invalid_argument("duplicate unit id '" + id + "'");
  seen.clear();
  for (const auto& c : t.columns)
    if (!seen.insert(c).second)
      throw std::invalid_argument("duplicate column name '" + c + "'");
}

}  // namespace detail

// Builds a validated table; missing names are filled with x1..xk / 1..N and
// the binary/continuous mask is derived from the data.
inline CovariateTable make_covariate_table(Eigen::MatrixXd values,
                                           std::vector<std::string> columns = {},
                                           std::vector<std::string> unit_ids = {}) {
  CovariateTable t;
  t.values = std::move(values);
  if (columns.empty())
    for (Eigen::Index j = 0; j < t.values.cols(); ++j)
      columns.push_back("x" + std::to_string(j + 1));
  if (unit_ids.empty())
    for (Eigen::Index i = 0; i < t.values.rows(); ++i)
      unit_ids.push_back(std::to_string(i + 1));
  t.columns = std::move(columns);
  t.unit_ids = std::move(unit_ids);
  t.scaled_mask.resize(t.values.cols());
  for (Eigen::Index j = 0; j < t.values.cols(); ++j)
    t.scaled_mask[j] = !detail::is_binary_column(t.values.col(j));
  detail::validate_table(t);
  return t;
}

inline CovariateTable subset_columns(const CovariateTable& t,
                                     std::span<const std::string> names) {
  if (names.empty()) throw std::invalid_argument("column subset is empty");
  Eigen::MatrixXd vals(t.n_units(), static_cast<Eigen::Index>(names.size()));
  std::vector<std::string> cols;
  for (std::size_t j = 0; j < names.size(); ++j) {
    vals.col(static_cast<Eigen::Index>(j)) = t.values.col(t.column_index(names[j]));
    cols.push_back(names[j]);
  }
  return make_covariate_table(std::move(vals), std::move(cols), t.unit_ids);
}

// Reads a covariate CSV. Every non-id cell must parse as a finite number;
// errors name the row and column. If id_column is given it must exist and
// supplies unit_ids, otherwise rows are numbered 1..N.
inline CovariateTable load_covariates(
    const std::filesystem::path& path,
    std::optional<std::string> id_column = std::nullopt) {
  const csv::Table raw = csv::read_file(path);
  if (raw.rows.empty())
    throw std::invalid_argument(path.filename().string() + ": no data rows");

  std::ptrdiff_t id_idx = -1;
  if (id_column) {
    for (std::size_t j = 0; j < raw.header.size(); ++j)
      if (raw.header[j] == *id_column) id_idx = static_cast<std::ptrdiff_t>(j);
    if (id_idx < 0)
      throw std::invalid_argument(path.filename().string() +
                                  ": id column '" + *id_column + "' not found");
  }

  std::vector<std::string> columns;
  for (std::size_t j = 0; j < raw.header.size(); ++j)
    if (static_cast<std::ptrdiff_t>(j) != id_idx) columns.push_back(raw.header[j]);
  if (columns.empty())
    throw std::invalid_argument(path.filename().string() + ": no covariate columns");

  const auto n = static_cast<Eigen::Index>(raw.rows.size());
  Eigen::MatrixXd vals(n, static_cast<Eigen::Index>(columns.size()));
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cells = raw.rows[static_cast<std::size_t>(i)];
    Eigen::Index jj = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (static_cast<std::ptrdiff_t>(j) == id_idx) {
        ids.push_back(cells[j]);
        continue;
      }
      double v;
      if (!csv::parse_double(cells[j], v))
        throw std::invalid_argument(path.filename().string() + ": row " +
                                    std::to_string(i + 2) + ", column '" +
                                    raw.header[j] + "': cannot parse '" +
                                    cells[j] + "' as a finite number");
      vals(i, jj++) = v;
    }
  }
  return make_covariate_table(std::move(vals), std::move(columns), std::move(ids));
}

// Full-sample moments used throughout the selection math. Covariance divides
// by N, not N-1: the selection criteria mix scatter matrices of nested
// subsets and the algebra only lines up with the divide-by-count form.
struct FullSampleStats {
  Eigen::VectorXd mean;         // k
  Eigen::MatrixXd scatter;      // (1/N) X'X
  Eigen::MatrixXd covariance;   // scatter - mean mean'
  Eigen::MatrixXd design_cross; // (1/N) [1 X]'[1 X]
};

inline FullSampleStats full_sample_stats(const CovariateTable& t) {
  const auto n = t.n_units();
  const auto k = t.n_covariates();
  FullSampleStats s;
  s.mean = t.values.colwise().mean();
  s.scatter = (t.values.transpose() * t.values) / static_cast<double>(n);
  s.covariance = s.scatter - s.mean * s.mean.transpose();
  s.design_cross.resize(k + 1, k + 1);
  s.design_cross(0, 0) = 1.0;
  s.design_cross.block(0, 1, 1, k) = s.mean.transpose();
  s.design_cross.block(1, 0, k, 1) = s.mean;
  s.design_cross.block(1, 1, k, k) = s.scatter;
  return s;
}

}  // namespace fsm
