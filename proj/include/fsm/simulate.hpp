#pragma once

// Synthetic data generators for the built-in simulation study: a six-
// covariate benchmark sample (trivariate normal block, a uniform, a
// chi-square and a coin flip) and a registry of outcome models b1..b6, all
// sharp-null (identical potential outcomes across groups).

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fsm/data.hpp"
#include "fsm/rng.hpp"

namespace fsm {

// (X1,X2,X3) ~ N(0, [[2,1,-1],[1,1,-.5],[-1,-.5,1]]), X4 ~ U(-3,3),
// X5 ~ chi-square(1), X6 ~ Bernoulli(1/2). One unit consumes a fixed number
// of draws, so samples replay exactly.
inline CovariateTable hainmueller_sample(int n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("sample size must be >= 1");
  Eigen::Matrix3d sigma;
  sigma << 2, 1, -1, 1, 1, -0.5, -1, -0.5, 1;
  const Eigen::Matrix3d chol = sigma.llt().matrixL();
  Eigen::MatrixXd vals(n, 6);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
    vals.block<1, 3>(i, 0) = (chol * z).transpose();
    vals(i, 3) = rng.uniform(-3.0, 3.0);
    vals(i, 4) = rng.chisq1();
    vals(i, 5) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return make_covariate_table(std::move(vals),
                              {"X1", "X2", "X3", "X4", "X5", "X6"});
}

// Potential outcomes under the named model: an N x n_groups matrix whose
// columns are identical (sharp null), with one noise draw per unit.
//   b1: X1+X2+X3-X4+X5+X6 + N(0,1)
//   b2: (X1+X2+X5)^2 + N(0,1)
//   b3: 5-3X1+X2+X3-0.2X4+0.8X5 + N(0,1.5^2)
//   b4: 5-2X1^2+0.5X3^2+0.5X5^2+5X1X2-0.8X3X5 + N(0,1.5^2)
//   b5: 10+8X1X2+3X2X5-0.5X3X5 + N(0,1.5^2)
//   b6: 0.8X1X2-3X3^2+1/(1+X4)-4X1^3 + N(0,1.5^2)
inline Eigen::MatrixXd model_potentials(std::string_view model,
                                        const CovariateTable& table,
                                        int n_groups, RngStream& rng) {
  if (n_groups < 2) throw std::invalid_argument("need at least two groups");
  const auto need = [&](int k) {
    if (table.n_covariates() < k)
      throw std::invalid_argument("model " + std::string(model) + " needs " +
                                  std::to_string(k) + " covariate columns");
  };
  auto col = [&](int j) { return table.values.col(j - 1).array(); };

  Eigen::ArrayXd f;
  double sd = 1.0;
  if (model == "b1") {
    need(6);
    f = col(1) + col(2) + col(3) - col(4) + col(5) + col(6);
  } else if (model == "b2") {
    need(5);
    f = (col(1) + col(2) + col(5)).square();
  } else if (model == "b3") {
    need(5);
    sd = 1.5;
    f = 5.0 - 3.0 * col(1) + col(2) + col(3) - 0.2 * col(4) + 0.8 * col(5);
  } else if (model == "b4") {
    need(5);
    sd = 1.5;
    f = 5.0 - 2.0 * col(1).square() + 0.5 * col(3).square() +
        0.5 * col(5).square() + 5.0 * col(1) * col(2) - 0.8 * col(3) * col(5);
  } else if (model == "b5") {
    need(5);
    sd = 1.5;
    f = 10.0 + 8.0 * col(1) * col(2) + 3.0 * col(2) * col(5) -
        0.5 * col(3) * col(5);
  } else if (model == "b6") {
    need(4);
    sd = 1.5;
    f = 0.8 * col(1) * col(2) - 3.0 * col(3).square() +
        (1.0 + col(4)).inverse() - 4.0 * col(1).cube();
  } else {
    throw std::invalid_argument("unknown outcome model '" + std::string(model) +
                                "' (expected b1..b6)");
  }

  Eigen::VectorXd y(table.n_units());
  for (Eigen::Index i = 0; i < table.n_units(); ++i)
    y[i] = f[i] + sd * rng.normal();
  if (!y.allFinite())
    throw std::runtime_error("model " + std::string(model) +
                             " produced non-finite outcomes on this table");
  Eigen::MatrixXd pot(table.n_units(), n_groups);
  for (int g = 0; g < n_groups; ++g) pot.col(g) = y;
  return pot;
}

}  // namespace fsm
