#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsm/data.hpp"
#include "test_support.hpp"

using testsupport::TempDir;
using testsupport::write_text;

TEST_CASE("make_covariate_table fills defaults and detects binary columns") {
  Eigen::MatrixXd v(3, 2);
  v << 1.5, 0, 2.5, 1, 3.5, 1;
  auto t = fsm::make_covariate_table(v);
  REQUIRE(t.columns == std::vector<std::string>{"x1", "x2"});
  REQUIRE(t.unit_ids == std::vector<std::string>{"1", "2", "3"});
  REQUIRE(t.scaled_mask[0]);
  REQUIRE_FALSE(t.scaled_mask[1]);
}

TEST_CASE("table validation rejects bad shapes and values") {
  Eigen::MatrixXd v(2, 1);
  v << 1, 2;
  REQUIRE_THROWS_AS(fsm::make_covariate_table(v, {"a"}, {"u", "u"}),
                    std::invalid_argument);
  Eigen::MatrixXd bad(1, 1);
  bad << std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(fsm::make_covariate_table(bad), std::invalid_argument);
  REQUIRE_THROWS_AS(fsm::make_covariate_table(Eigen::MatrixXd(0, 1)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(fsm::make_covariate_table(v, {"a", "extra"}),
                    std::invalid_argument);
}

TEST_CASE("load_covariates parses a file with an id column") {
  TempDir tmp("load");
  const auto p = tmp.path() / "cov.csv";
  write_text(p, "unit_id,age,score\nA,24,1.5\nB,30,-2\nC,34,0.25\n");
  auto t = fsm::load_covariates(p, "unit_id");
  REQUIRE(t.n_units() == 3);
  REQUIRE(t.n_covariates() == 2);
  REQUIRE(t.unit_ids == std::vector<std::string>{"A", "B", "C"});
  REQUIRE(t.columns == std::vector<std::string>{"age", "score"});
  REQUIRE(t.values(1, 0) == 30.0);
  REQUIRE(t.values(2, 1) == 0.25);

  auto again = fsm::load_covariates(p, "unit_id");
  REQUIRE(again.values == t.values);
  REQUIRE(again.unit_ids == t.unit_ids);
}

TEST_CASE("load_covariates without id column numbers the rows") {
  TempDir tmp("noid");
  const auto p = tmp.path() / "cov.csv";
  write_text(p, "a,b\n1,2\n3,4\n");
  auto t = fsm::load_covariates(p);
  REQUIRE(t.unit_ids == std::vector<std::string>{"1", "2"});
}

TEST_CASE("loader errors name the offending location") {
  TempDir tmp("errs");
  const auto bad_cell = tmp.path() / "bad.csv";
  write_text(bad_cell, "a,b\n1,2\n3,oops\n");
  try {
    fsm::load_covariates(bad_cell);
    FAIL("expected a parse error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("row 3") != std::string::npos);
    REQUIRE(msg.find("'b'") != std::string::npos);
    REQUIRE(msg.find("oops") != std::string::npos);
  }

  const auto dup = tmp.path() / "dup.csv";
  write_text(dup, "unit_id,a\nu1,1\nu1,2\n");
  REQUIRE_THROWS_WITH(fsm::load_covariates(dup, "unit_id"),
                      Catch::Matchers::ContainsSubstring("duplicate unit id"));

  const auto empty = tmp.path() / "empty.csv";
  write_text(empty, "");
  REQUIRE_THROWS_WITH(fsm::load_covariates(empty),
                      Catch::Matchers::ContainsSubstring("empty"));

  const auto header_only = tmp.path() / "header.csv";
  write_text(header_only, "a,b\n");
  REQUIRE_THROWS_WITH(fsm::load_covariates(header_only),
                      Catch::Matchers::ContainsSubstring("no data rows"));

  const auto missing_id = tmp.path() / "mid.csv";
  write_text(missing_id, "a,b\n1,2\n");
  REQUIRE_THROWS_WITH(fsm::load_covariates(missing_id, "unit_id"),
                      Catch::Matchers::ContainsSubstring("not found"));

  const auto ragged = tmp.path() / "ragged.csv";
  write_text(ragged, "a,b\n1,2\n3\n");
  REQUIRE_THROWS_WITH(fsm::load_covariates(ragged),
                      Catch::Matchers::ContainsSubstring("fields"));

  const auto inf_cell = tmp.path() / "inf.csv";
  write_text(inf_cell, "a\ninf\n");
  REQUIRE_THROWS_AS(fsm::load_covariates(inf_cell), std::invalid_argument);
}

TEST_CASE("full-sample stats: age example and block identities") {
  auto t = testsupport::ages_table();
  auto s = fsm::full_sample_stats(t);
  REQUIRE(s.mean.size() == 1);
  REQUIRE(s.mean[0] == Catch::Approx(43.0).margin(1e-12));

  // covariance = scatter - mean mean'
  REQUIRE((s.covariance - (s.scatter - s.mean * s.mean.transpose())).norm() <
          1e-12);

  // design_cross blocks: [[1, mean'],[mean, scatter]]
  REQUIRE(s.design_cross(0, 0) == 1.0);
  REQUIRE((s.design_cross.block(1, 1, 1, 1) - s.scatter).norm() < 1e-12);
  REQUIRE(s.design_cross(0, 1) == Catch::Approx(43.0).margin(1e-12));

  // Divide-by-N variance of the ages, checked against a direct loop.
  double ss = 0;
  for (int i = 0; i < 12; ++i) {
    const double d = t.values(i, 0) - 43.0;
    ss += d * d;
  }
  REQUIRE(s.covariance(0, 0) == Catch::Approx(ss / 12.0).margin(1e-10));
}

TEST_CASE("full-sample stats identities on a random wide table") {
  auto rng = fsm::RngStream::from_seed(99);
  auto t = testsupport::random_table(37, 5, rng);
  auto s = fsm::full_sample_stats(t);
  REQUIRE((s.covariance - (s.scatter - s.mean * s.mean.transpose())).norm() <
          1e-12);
  Eigen::MatrixXd design(37, 6);
  design.col(0).setOnes();
  design.rightCols(5) = t.values;
  const Eigen::MatrixXd direct = design.transpose() * design / 37.0;
  REQUIRE((s.design_cross - direct).norm() < 1e-12);
}

TEST_CASE("subset_columns keeps order, ids and mask") {
  Eigen::MatrixXd v(2, 3);
  v << 1, 0, 5, 2, 1, 6;
  auto t = fsm::make_covariate_table(v, {"a", "flag", "c"}, {"u1", "u2"});
  auto sub = fsm::subset_columns(t, std::vector<std::string>{"c", "flag"});
  REQUIRE(sub.columns == std::vector<std::string>{"c", "flag"});
  REQUIRE(sub.values(0, 0) == 5.0);
  REQUIRE(sub.values(1, 1) == 1.0);
  REQUIRE(sub.unit_ids == t.unit_ids);
  REQUIRE(sub.scaled_mask[0]);
  REQUIRE_FALSE(sub.scaled_mask[1]);
  REQUIRE_THROWS_AS(fsm::subset_columns(t, std::vector<std::string>{"nope"}),
                    std::invalid_argument);
}
