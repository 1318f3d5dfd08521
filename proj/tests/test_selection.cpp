#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fsm/selection.hpp"
#include "test_support.hpp"

using fsm::DesignSpec;
using fsm::FullSampleStats;
using fsm::GroupState;
using fsm::Regime;
using fsm::RngStream;
using fsm::StageScorer;

namespace {

struct Instance {
  fsm::CovariateTable table;
  GroupState state;
  std::vector<int> pool;
};

// Random table with a group of `picked` units already selected; the rest form
// the candidate pool.
Instance make_instance(int n, int k, int picked, RngStream& rng) {
  Instance inst{testsupport::random_table(n, k, rng), GroupState::empty(0, k), {}};
  auto perm = rng.permutation(static_cast<std::size_t>(n));
  for (int i = 0; i < picked; ++i)
    fsm::update_state(inst.state, static_cast<int>(perm[static_cast<std::size_t>(i)]),
                      inst.table.values.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)])).transpose());
  for (int i = picked; i < n; ++i)
    inst.pool.push_back(static_cast<int>(perm[static_cast<std::size_t>(i)]));
  std::sort(inst.pool.begin(), inst.pool.end());
  return inst;
}

// Augmented group design [1 X_g] as an explicit matrix.
Eigen::MatrixXd group_design(const Instance& inst) {
  const auto k = inst.table.n_covariates();
  Eigen::MatrixXd d(static_cast<Eigen::Index>(inst.state.units.size()), k + 1);
  for (std::size_t r = 0; r < inst.state.units.size(); ++r) {
    d(static_cast<Eigen::Index>(r), 0) = 1.0;
    d.row(static_cast<Eigen::Index>(r)).tail(k) =
        inst.table.values.row(inst.state.units[r]);
  }
  return d;
}

Eigen::VectorXd augment(const Eigen::VectorXd& x) {
  Eigen::VectorXd v(x.size() + 1);
  v[0] = 1.0;
  v.tail(x.size()) = x;
  return v;
}

}  // namespace

TEST_CASE("state updates match batch recomputation") {
  auto rng = RngStream::from_seed(211);
  auto inst = make_instance(15, 4, 9, rng);
  const Eigen::MatrixXd d = group_design(inst);
  const Eigen::MatrixXd direct = d.transpose() * d;
  REQUIRE((inst.state.design_cross - direct).norm() < 1e-10 * direct.norm());
  // Block consistency: design_cross embeds count, sum and scatter.
  REQUIRE(inst.state.design_cross(0, 0) == Catch::Approx(9.0));
  REQUIRE((inst.state.design_cross.block(1, 0, 4, 1) - inst.state.sum).norm() < 1e-10);
  REQUIRE((inst.state.design_cross.block(1, 1, 4, 4) - inst.state.scatter_sum).norm() <
          1e-10 * inst.state.scatter_sum.norm());
  REQUIRE(inst.state.mean().isApprox(inst.state.sum / 9.0));
}

TEST_CASE("empty regime ranks by distance from the sample center") {
  auto table = testsupport::ages_table();
  auto full = fsm::full_sample_stats(table);
  DesignSpec spec;
  spec.group_sizes = {6, 6};
  auto state = GroupState::empty(0, 1);
  StageScorer scorer(state, full, spec);
  REQUIRE(scorer.regime() == Regime::kEmpty);
  // Ages 24 and 60 sit 19 and 17 years from the mean of 43.
  const double s24 = scorer.score(table.values.row(0).transpose());
  const double s60 = scorer.score(table.values.row(11).transpose());
  REQUIRE(s24 > s60);
  const double var = full.covariance(0, 0);
  REQUIRE(s24 == Catch::Approx(19.0 * 19.0 / var).epsilon(1e-12));
  REQUIRE(s60 == Catch::Approx(17.0 * 17.0 / var).epsilon(1e-12));
}

TEST_CASE("full-rank scores match the brute-force determinant objective") {
  auto rng = RngStream::from_seed(223);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto trng = rng.child("trial", static_cast<std::uint64_t>(trial));
    const int k = 1 + static_cast<int>(trng.below(3));
    const int n = std::max(k + 4, 6 + static_cast<int>(trng.below(7)));
    const int picked = k + 1 + static_cast<int>(trng.below(
                                   static_cast<std::uint64_t>(n - k - 3)));
    auto inst = make_instance(n, k, picked, trng);

    auto full = fsm::full_sample_stats(inst.table);
    DesignSpec spec;
    spec.group_sizes = {picked + static_cast<int>(inst.pool.size()) - 1, 1};
    StageScorer scorer(inst.state, full, spec);
    REQUIRE(scorer.regime() == Regime::kPure);

    const Eigen::MatrixXd d = group_design(inst);
    const Eigen::MatrixXd m = d.transpose() * d;
    const double det_m = m.determinant();

    std::vector<double> mahal, quad, brute;
    for (int u : inst.pool) {
      const Eigen::VectorXd x = inst.table.values.row(u).transpose();
      mahal.push_back(scorer.score(x));
      quad.push_back(fsm::dopt_score_det(x, inst.state));
      Eigen::MatrixXd di(d.rows() + 1, d.cols());
      di.topRows(d.rows()) = d;
      di.row(d.rows()) = augment(x).transpose();
      brute.push_back((di.transpose() * di).determinant());
    }
    for (std::size_t i = 0; i < brute.size(); ++i) {
      // Appending a row multiplies the determinant by 1 + quadratic form.
      REQUIRE(brute[i] == Catch::Approx(det_m * (1.0 + quad[i])).epsilon(1e-8));
      // The quadratic form is an affine function of the distance score.
      REQUIRE(quad[i] ==
              Catch::Approx((1.0 + mahal[i]) / static_cast<double>(picked))
                  .epsilon(1e-8));
    }
    const auto arg_mahal =
        std::max_element(mahal.begin(), mahal.end()) - mahal.begin();
    const auto arg_brute =
        std::max_element(brute.begin(), brute.end()) - brute.begin();
    REQUIRE(arg_mahal == arg_brute);

    // Full ranking agreement, not just the argmax.
    std::vector<std::size_t> order_m(mahal.size()), order_b(brute.size());
    std::iota(order_m.begin(), order_m.end(), std::size_t{0});
    std::iota(order_b.begin(), order_b.end(), std::size_t{0});
    std::sort(order_m.begin(), order_m.end(),
              [&](std::size_t a, std::size_t b) { return mahal[a] < mahal[b]; });
    std::sort(order_b.begin(), order_b.end(),
              [&](std::size_t a, std::size_t b) { return brute[a] < brute[b]; });
    REQUIRE(order_m == order_b);
    ++checked;
  }
  REQUIRE(checked == 100);
}

TEST_CASE("ridge scores match the explicit augmented-design construction") {
  auto rng = RngStream::from_seed(227);
  for (int trial = 0; trial < 60; ++trial) {
    auto trng = rng.child("trial", static_cast<std::uint64_t>(trial));
    const int k = 1 + static_cast<int>(trng.below(3));
    const int n = 8 + static_cast<int>(trng.below(5));
    const int picked = 1 + static_cast<int>(trng.below(static_cast<std::uint64_t>(k)));
    auto inst = make_instance(n, k, picked, trng);
    auto full = fsm::full_sample_stats(inst.table);

    for (double eps : {0.1, 0.01, 0.001}) {
      DesignSpec spec;
      spec.group_sizes = {n - 1, 1};
      spec.epsilon = eps;
      StageScorer scorer(inst.state, full, spec);
      REQUIRE(scorer.regime() == Regime::kRidge);

      // Stack sqrt(1/m)-weighted group rows over sqrt(eps/N)-weighted full
      // rows and invert the cross-product directly.
      const Eigen::MatrixXd dg = group_design(inst);
      Eigen::MatrixXd df(n, k + 1);
      df.col(0).setOnes();
      df.rightCols(k) = inst.table.values;
      Eigen::MatrixXd stacked(dg.rows() + n, k + 1);
      stacked.topRows(dg.rows()) =
          dg / std::sqrt(static_cast<double>(picked));
      stacked.bottomRows(n) = df * std::sqrt(eps / n);
      const Eigen::MatrixXd cross = stacked.transpose() * stacked;
      const Eigen::MatrixXd cross_inv = cross.inverse();

      for (int u : inst.pool) {
        const Eigen::VectorXd x = inst.table.values.row(u).transpose();
        const Eigen::VectorXd v = augment(x);
        const double quad = v.dot(cross_inv * v);
        const double score = scorer.score(x);
        // Augmented quadratic form = distance score + 1/(1+eps): the two
        // objectives are an affine shift apart, so they rank identically.
        REQUIRE(quad == Catch::Approx(score + 1.0 / (1.0 + eps)).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("a-opt scores equal the brute-force trace decrease") {
  auto rng = RngStream::from_seed(229);
  for (int trial = 0; trial < 40; ++trial) {
    auto trng = rng.child("trial", static_cast<std::uint64_t>(trial));
    const int k = 1 + static_cast<int>(trng.below(3));
    const int n = 10 + static_cast<int>(trng.below(4));
    const int picked = k + 2;
    auto inst = make_instance(n, k, picked, trng);
    auto full = fsm::full_sample_stats(inst.table);

    fsm::AOptPolicy policy;
    policy.points.resize(5, k + 1);
    for (int r = 0; r < 5; ++r) {
      policy.points(r, 0) = 1.0;
      for (int c = 1; c <= k; ++c) policy.points(r, c) = trng.normal();
    }
    policy.weights = Eigen::VectorXd::Constant(5, 0.2);
    const Eigen::MatrixXd t = policy.t();

    DesignSpec spec;
    spec.group_sizes = {n - 1, 1};
    spec.selection = fsm::SelectionMethod::kAOptimal;
    spec.aopt = policy;
    StageScorer scorer(inst.state, full, spec);
    REQUIRE(scorer.regime() == Regime::kPure);

    const Eigen::MatrixXd d = group_design(inst);
    const Eigen::MatrixXd m = d.transpose() * d;
    const double trace_before = (t * m.inverse()).trace();

    std::vector<double> scores, trace_after;
    for (int u : inst.pool) {
      const Eigen::VectorXd x = inst.table.values.row(u).transpose();
      scores.push_back(scorer.score(x));
      Eigen::MatrixXd mi = m + augment(x) * augment(x).transpose();
      trace_after.push_back((t * mi.inverse()).trace());
      REQUIRE(scores.back() ==
              Catch::Approx(trace_before - trace_after.back()).epsilon(1e-8));
      REQUIRE(scores.back() ==
              Catch::Approx(fsm::aopt_score(x, inst.state, policy)).epsilon(1e-12));
    }
    const auto best_score =
        std::max_element(scores.begin(), scores.end()) - scores.begin();
    const auto best_trace =
        std::min_element(trace_after.begin(), trace_after.end()) -
        trace_after.begin();
    REQUIRE(best_score == best_trace);
  }
}

TEST_CASE("a-opt falls back to distance scoring while the design is deficient") {
  auto rng = RngStream::from_seed(233);
  auto inst = make_instance(10, 3, 0, rng);
  auto full = fsm::full_sample_stats(inst.table);
  DesignSpec aspec;
  aspec.group_sizes = {9, 1};
  aspec.selection = fsm::SelectionMethod::kAOptimal;
  DesignSpec dspec = aspec;
  dspec.selection = fsm::SelectionMethod::kDOptimal;

  SECTION("empty state") {
    StageScorer a(inst.state, full, aspec), d(inst.state, full, dspec);
    REQUIRE(a.regime() == Regime::kEmpty);
    for (int u : inst.pool) {
      const Eigen::VectorXd x = inst.table.values.row(u).transpose();
      REQUIRE(a.score(x) == d.score(x));
    }
  }
  SECTION("singular design") {
    fsm::update_state(inst.state, inst.pool[0],
                      inst.table.values.row(inst.pool[0]).transpose());
    StageScorer a(inst.state, full, aspec), d(inst.state, full, dspec);
    REQUIRE(a.regime() == Regime::kRidge);
    for (std::size_t i = 1; i < inst.pool.size(); ++i) {
      const Eigen::VectorXd x =
          inst.table.values.row(inst.pool[i]).transpose();
      REQUIRE(a.score(x) == d.score(x));
    }
  }
}

TEST_CASE("selection is invariant under affine maps of the covariates") {
  auto rng = RngStream::from_seed(239);
  for (int trial = 0; trial < 20; ++trial) {
    auto trng = rng.child("trial", static_cast<std::uint64_t>(trial));
    const int k = 1 + static_cast<int>(trng.below(3));
    const int n = 9 + static_cast<int>(trng.below(4));
    for (int picked : {0, 1, k + 1}) {
      auto inst = make_instance(n, k, picked, trng);
      // Random invertible map A (QR of a random matrix plus diagonal) and b.
      Eigen::MatrixXd a(k, k);
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) a(r, c) = trng.normal();
      a += 3.0 * Eigen::MatrixXd::Identity(k, k);
      Eigen::VectorXd b(k);
      for (int r = 0; r < k; ++r) b[r] = trng.normal();

      Instance mapped = inst;
      mapped.table.values =
          (inst.table.values * a.transpose()).rowwise() + b.transpose();
      mapped.state = GroupState::empty(0, k);
      for (int u : inst.state.units)
        fsm::update_state(mapped.state, u, mapped.table.values.row(u).transpose());

      auto full = fsm::full_sample_stats(inst.table);
      auto full_m = fsm::full_sample_stats(mapped.table);
      DesignSpec spec;
      spec.group_sizes = {n - 1, 1};

      auto r1 = trng.child("draw");
      auto r2 = trng.child("draw");
      auto c1 = fsm::select_next(inst.state, inst.pool, inst.table, full, spec, r1);
      auto c2 = fsm::select_next(mapped.state, mapped.pool, mapped.table, full_m,
                                 spec, r2);
      REQUIRE(c1.chosen == c2.chosen);
      REQUIRE(c1.tie_set == c2.tie_set);
      REQUIRE(c1.regime == c2.regime);
    }
  }
}

TEST_CASE("exact ties break uniformly with a single draw") {
  Eigen::MatrixXd v(5, 1);
  // Twins at 0 sit 2.9 from the mean of 2.9; every other unit is closer.
  v << 0, 0, 4, 5, 5.5;
  auto table = fsm::make_covariate_table(v);
  auto full = fsm::full_sample_stats(table);
  DesignSpec spec;
  spec.group_sizes = {3, 2};
  auto state = GroupState::empty(0, 1);
  const std::vector<int> pool = {0, 1, 2, 3, 4};

  auto rng = RngStream::from_seed(241);
  int first = 0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    auto r = rng.child("draw", static_cast<std::uint64_t>(i));
    auto card = fsm::select_next(state, pool, table, full, spec, r);
    REQUIRE(card.tie_set == std::vector<int>{0, 1});
    if (card.chosen == 0) ++first;
  }
  REQUIRE(std::abs(first - draws / 2) < 100);
}

TEST_CASE("random selection method is uniform over the pool") {
  auto rng = RngStream::from_seed(251);
  auto table = testsupport::random_table(5, 2, rng);
  auto full = fsm::full_sample_stats(table);
  DesignSpec spec;
  spec.group_sizes = {3, 2};
  spec.selection = fsm::SelectionMethod::kRandom;
  auto state = GroupState::empty(0, 2);
  const std::vector<int> pool = {0, 1, 2, 3, 4};
  std::vector<int> counts(5, 0);
  const int draws = 5000;
  for (int i = 0; i < draws; ++i) {
    auto r = rng.child("draw", static_cast<std::uint64_t>(i));
    auto card = fsm::select_next(state, pool, table, full, spec, r);
    REQUIRE(card.regime == Regime::kNone);
    REQUIRE(card.tie_set == pool);
    ++counts[static_cast<std::size_t>(card.chosen)];
  }
  for (int c : counts)
    REQUIRE(std::abs(c - 1000) < 5.0 * std::sqrt(1000.0));
}

TEST_CASE("constant columns raise a clear error") {
  Eigen::MatrixXd v(6, 2);
  v << 1, 7, 2, 7, 3, 7, 4, 7, 5, 7, 6, 7;
  auto table = fsm::make_covariate_table(v);
  auto full = fsm::full_sample_stats(table);
  DesignSpec spec;
  spec.group_sizes = {3, 3};
  auto state = GroupState::empty(0, 2);
  REQUIRE_THROWS_WITH(StageScorer(state, full, spec),
                      Catch::Matchers::ContainsSubstring("singular"));
}

TEST_CASE("scorer rejects mismatched dimensions") {
  auto rng = RngStream::from_seed(257);
  auto table = testsupport::random_table(6, 2, rng);
  auto full = fsm::full_sample_stats(table);
  DesignSpec spec;
  spec.group_sizes = {3, 3};
  auto state = GroupState::empty(0, 3);  // wrong k
  REQUIRE_THROWS_AS(StageScorer(state, full, spec), std::invalid_argument);
}
