#pragma once

// Selection order matrices: the random turn-taking sequence that decides
// which treatment group picks at each stage. All generators produce exact
// group counts; the probabilistic construction additionally keeps every
// group's running share close to its target share at every prefix
// (sequential control), so no group ever gets a long run of early picks.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fsm/design.hpp"
#include "fsm/rng.hpp"

namespace fsm {

struct SelectionOrderMatrix {
  int n_groups = 0;
  std::vector<int> group_at_stage;    // 0-based group per stage
  std::vector<int> stratum_at_stage;  // empty unless stratified
  std::vector<double> prob_at_stage;  // conditional P(first group), 2-group only

  std::size_t n_stages() const { return group_at_stage.size(); }

  std::vector<int> counts() const {
    std::vector<int> c(n_groups, 0);
    for (int g : group_at_stage) ++c[g];
    return c;
  }
};

// Conditional probability that the next stage goes to the first group, given
// that s_prev of the first group's stages have been used and the target
// cumulative share is f_prev. p_r is the first group's overall share. The
// same formula covers stage 1 with (f_prev, s_prev) = (0, 0). The returned
// value is clamped to [0,1]; the unclamped formula already forces 0 or 1
// whenever a group's quota would otherwise be violated.
inline double scomars_conditional(double p_r, double f_prev, double s_prev) {
  const double dev = s_prev - f_prev;
  const double num = p_r - std::max(0.0, dev);
  const double den = 1.0 - std::abs(dev);
  if (den <= 0.0) return dev > 0.0 ? 0.0 : 1.0;  // control already at the boundary
  return std::clamp(num / den, 0.0, 1.0);
}

// Two-group sequentially controlled order: |S_r - F_r| < 1 at every stage and
// group counts are exactly (n1, n2). Group index 0 is the "first" group whose
// share p = n1/(n1+n2) drives the conditional probabilities. F_r is computed
// as r*n1/N rather than by running accumulation so targets stay exact.
inline SelectionOrderMatrix generate_scomars_som(int n1, int n2, RngStream& rng) {
  if (n1 < 1 || n2 < 1)
    throw std::invalid_argument("scomars: both group sizes must be >= 1");
  const int n = n1 + n2;
  const double p = static_cast<double>(n1) / n;
  SelectionOrderMatrix som;
  som.n_groups = 2;
  som.group_at_stage.reserve(n);
  som.prob_at_stage.reserve(n);
  int s = 0;  // stages taken by group 0 so far
  for (int r = 1; r <= n; ++r) {
    const double f_prev = static_cast<double>(r - 1) * n1 / n;
    const double prob = scomars_conditional(p, f_prev, s);
    const bool first = rng.uniform01() < prob;
    som.group_at_stage.push_back(first ? 0 : 1);
    som.prob_at_stage.push_back(prob);
    if (first) ++s;
  }
  if (s != n1) throw std::logic_error("scomars: quota violated");
  return som;
}

// Equal-size groups: stack n_per_group independent random permutations of the
// group list. Every prefix deviation is bounded by (G-1)/G exactly.
inline SelectionOrderMatrix generate_randomized_chunk_som(int n_groups,
                                                          int n_per_group,
                                                          RngStream& rng) {
  if (n_groups < 1 || n_per_group < 1)
    throw std::invalid_argument("randomized chunk: counts must be >= 1");
  SelectionOrderMatrix som;
  som.n_groups = n_groups;
  som.group_at_stage.reserve(static_cast<std::size_t>(n_groups) * n_per_group);
  for (int c = 0; c < n_per_group; ++c) {
    auto perm = rng.permutation(static_cast<std::size_t>(n_groups));
    for (auto g : perm) som.group_at_stage.push_back(static_cast<int>(g));
  }
  return som;
}

// Exactly two distinct group sizes: a two-group sequentially controlled order
// decides which size class supplies each stage (class of group_sizes[0]
// first), and within each class the groups take turns in stacked random
// permutations. Counts are exact for every group.
inline SelectionOrderMatrix generate_two_size_som(const std::vector<int>& sizes,
                                                  RngStream& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("need at least two groups");
  for (int n : sizes)
    if (n < 1) throw std::invalid_argument("group sizes must be >= 1");
  const int size_a = sizes[0];
  int size_b = -1;
  std::vector<int> ids_a, ids_b;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    if (sizes[g] == size_a) {
      ids_a.push_back(static_cast<int>(g));
    } else {
      if (size_b < 0) size_b = sizes[g];
      if (sizes[g] != size_b)
        throw std::invalid_argument("more than two distinct group sizes");
      ids_b.push_back(static_cast<int>(g));
    }
  }
  if (ids_b.empty()) throw std::invalid_argument("sizes are all equal; use the randomized chunk");

  const int total_a = size_a * static_cast<int>(ids_a.size());
  const int total_b = size_b * static_cast<int>(ids_b.size());
  auto class_rng = rng.child("class");
  auto a_rng = rng.child("within", 0);
  auto b_rng = rng.child("within", 1);
  SelectionOrderMatrix outer = generate_scomars_som(total_a, total_b, class_rng);
  SelectionOrderMatrix within_a = generate_randomized_chunk_som(
      static_cast<int>(ids_a.size()), size_a, a_rng);
  SelectionOrderMatrix within_b = generate_randomized_chunk_som(
      static_cast<int>(ids_b.size()), size_b, b_rng);

  SelectionOrderMatrix som;
  som.n_groups = static_cast<int>(sizes.size());
  som.group_at_stage.reserve(outer.group_at_stage.size());
  std::size_t ca = 0, cb = 0;
  for (int cls : outer.group_at_stage) {
    if (cls == 0)
      som.group_at_stage.push_back(ids_a[static_cast<std::size_t>(within_a.group_at_stage[ca++])]);
    else
      som.group_at_stage.push_back(ids_b[static_cast<std::size_t>(within_b.group_at_stage[cb++])]);
  }
  return som;
}

// Size classes with equal products count*size (after grouping by size): the
// classes take turns in stacked random permutations (each class appears
// count*size times in total), and groups within a class do the same.
// classes are discovered in order of first appearance.
inline SelectionOrderMatrix generate_equal_product_som(const std::vector<int>& sizes,
                                                       RngStream& rng) {
  if (sizes.empty()) throw std::invalid_argument("need at least one group");
  for (int n : sizes)
    if (n < 1) throw std::invalid_argument("group sizes must be >= 1");
  std::vector<int> class_size;                // distinct sizes, first-appearance order
  std::vector<std::vector<int>> class_ids;    // group ids per class
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    std::size_t c = 0;
    for (; c < class_size.size(); ++c)
      if (class_size[c] == sizes[g]) break;
    if (c == class_size.size()) {
      class_size.push_back(sizes[g]);
      class_ids.emplace_back();
    }
    class_ids[c].push_back(static_cast<int>(g));
  }
  const int m = static_cast<int>(class_size.size());
  const int product = class_size[0] * static_cast<int>(class_ids[0].size());
  for (int c = 0; c < m; ++c)
    if (class_size[c] * static_cast<int>(class_ids[c].size()) != product)
      throw std::invalid_argument("size classes do not share a common count*size product");

  auto outer_rng = rng.child("classes");
  SelectionOrderMatrix outer = generate_randomized_chunk_som(m, product, outer_rng);
  std::vector<SelectionOrderMatrix> within(m);
  std::vector<std::size_t> cursor(m, 0);
  for (int c = 0; c < m; ++c) {
    auto wrng = rng.child("within", static_cast<std::uint64_t>(c));
    within[c] = generate_randomized_chunk_som(static_cast<int>(class_ids[c].size()),
                                              class_size[c], wrng);
  }

  SelectionOrderMatrix som;
  som.n_groups = static_cast<int>(sizes.size());
  som.group_at_stage.reserve(outer.group_at_stage.size());
  for (int cls : outer.group_at_stage) {
    auto& cur = cursor[static_cast<std::size_t>(cls)];
    som.group_at_stage.push_back(
        class_ids[cls][static_cast<std::size_t>(within[cls].group_at_stage[cur++])]);
  }
  return som;
}

inline SelectionOrderMatrix generate_som_for_sizes(const std::vector<int>& sizes,
                                                   RngStream& rng);

namespace detail {

// Fallback for size multisets none of the exact constructions cover: split
// the groups into two supergroups with near-equal unit totals (greedy over
// sizes in descending order, ties to the lighter side then lower index), let
// a two-group sequentially controlled order pick the supergroup per stage,
// and recurse within each side. Counts stay exact; the sequential-control
// bound is only guaranteed at the supergroup level.
inline SelectionOrderMatrix heuristic_split_som(const std::vector<int>& sizes,
                                                RngStream& rng) {
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<int> ids_a, ids_b;
  long total_a = 0, total_b = 0;
  for (std::size_t g : order) {
    if (total_a <= total_b) {
      ids_a.push_back(static_cast<int>(g));
      total_a += sizes[g];
    } else {
      ids_b.push_back(static_cast<int>(g));
      total_b += sizes[g];
    }
  }
  std::sort(ids_a.begin(), ids_a.end());
  std::sort(ids_b.begin(), ids_b.end());

  auto side_sizes = [&](const std::vector<int>& ids) {
    std::vector<int> s;
    for (int g : ids) s.push_back(sizes[static_cast<std::size_t>(g)]);
    return s;
  };
  auto side_som = [&](const std::vector<int>& ids, std::uint64_t which) {
    auto srng = rng.child("side", which);
    if (ids.size() == 1) {
      SelectionOrderMatrix one;
      one.n_groups = 1;
      one.group_at_stage.assign(
          static_cast<std::size_t>(sizes[static_cast<std::size_t>(ids[0])]), 0);
      return one;
    }
    return generate_som_for_sizes(side_sizes(ids), srng);
  };

  auto class_rng = rng.child("split");
  SelectionOrderMatrix outer =
      generate_scomars_som(static_cast<int>(total_a), static_cast<int>(total_b), class_rng);
  SelectionOrderMatrix som_a = side_som(ids_a, 0);
  SelectionOrderMatrix som_b = side_som(ids_b, 1);

  SelectionOrderMatrix som;
  som.n_groups = static_cast<int>(sizes.size());
  som.group_at_stage.reserve(outer.group_at_stage.size());
  std::size_t ca = 0, cb = 0;
  for (int cls : outer.group_at_stage) {
    if (cls == 0)
      som.group_at_stage.push_back(ids_a[static_cast<std::size_t>(som_a.group_at_stage[ca++])]);
    else
      som.group_at_stage.push_back(ids_b[static_cast<std::size_t>(som_b.group_at_stage[cb++])]);
  }
  return som;
}

}  // namespace detail

// Routes a size multiset to the most specific exact construction available.
inline SelectionOrderMatrix generate_som_for_sizes(const std::vector<int>& sizes,
                                                   RngStream& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("need at least two groups");
  for (int n : sizes)
    if (n < 1) throw std::invalid_argument("group sizes must be >= 1");

  if (sizes.size() == 2) {
    auto srng = rng.child("scomars");
    return generate_scomars_som(sizes[0], sizes[1], srng);
  }
  const bool all_equal =
      std::all_of(sizes.begin(), sizes.end(), [&](int n) { return n == sizes[0]; });
  if (all_equal) {
    auto crng = rng.child("chunk");
    return generate_randomized_chunk_som(static_cast<int>(sizes.size()), sizes[0], crng);
  }
  std::vector<int> distinct;
  for (int n : sizes)
    if (std::find(distinct.begin(), distinct.end(), n) == distinct.end())
      distinct.push_back(n);
  if (distinct.size() == 2) {
    auto trng = rng.child("two_size");
    return generate_two_size_som(sizes, trng);
  }
  // equal count*size products per size class?
  {
    std::map<int, int> count_of_size;
    for (int n : sizes) ++count_of_size[n];
    long product = -1;
    bool equal_products = true;
    for (auto [sz, cnt] : count_of_size) {
      const long p = static_cast<long>(sz) * cnt;
      if (product < 0) product = p;
      if (p != product) equal_products = false;
    }
    if (equal_products) {
      auto erng = rng.child("equal_product");
      return generate_equal_product_som(sizes, erng);
    }
  }
  auto hrng = rng.child("heuristic");
  return detail::heuristic_split_som(sizes, hrng);
}

inline SelectionOrderMatrix generate_som(const DesignSpec& spec, RngStream& rng) {
  return generate_som_for_sizes(spec.group_sizes, rng);
}

// Stratified orders. kPerStratum concatenates an independent order per
// stratum (stratum blocks in label order), which matches running the strata
// one after another. kInterleaved keeps the unstratified turn-taking order
// across groups and, independently per group, decides which stratum each of
// that group's turns draws from, using the same order machinery on the
// group's per-stratum quotas.
inline SelectionOrderMatrix generate_stratified_som(const DesignSpec& spec,
                                                    StratifiedMethod method,
                                                    RngStream& rng) {
  if (!spec.strata) throw std::invalid_argument("spec has no strata");
  const auto& st = *spec.strata;
  const int S = st.n_strata();
  const int G = spec.n_groups();

  SelectionOrderMatrix som;
  som.n_groups = G;

  if (method == StratifiedMethod::kPerStratum) {
    for (int s = 0; s < S; ++s) {
      const auto& row = st.group_sizes[s];
      std::vector<int> present_ids;
      std::vector<int> present_sizes;
      for (int g = 0; g < G; ++g)
        if (row[g] > 0) {
          present_ids.push_back(g);
          present_sizes.push_back(row[g]);
        }
      if (present_ids.empty()) continue;
      auto srng = rng.child("stratum", static_cast<std::uint64_t>(s));
      if (present_ids.size() == 1) {
        for (int i = 0; i < present_sizes[0]; ++i) {
          som.group_at_stage.push_back(present_ids[0]);
          som.stratum_at_stage.push_back(s);
        }
        continue;
      }
      SelectionOrderMatrix sub = generate_som_for_sizes(present_sizes, srng);
      for (int local : sub.group_at_stage) {
        som.group_at_stage.push_back(present_ids[static_cast<std::size_t>(local)]);
        som.stratum_at_stage.push_back(s);
      }
    }
    return som;
  }

  // kInterleaved
  auto base_rng = rng.child("base");
  SelectionOrderMatrix base = generate_som(spec, base_rng);
  std::vector<std::vector<int>> stratum_seq(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    std::vector<int> present_strata;
    std::vector<int> quotas;
    for (int s = 0; s < S; ++s)
      if (st.group_sizes[s][g] > 0) {
        present_strata.push_back(s);
        quotas.push_back(st.group_sizes[s][g]);
      }
    auto grng = rng.child("interleave", static_cast<std::uint64_t>(g));
    if (present_strata.size() == 1) {
      stratum_seq[g].assign(static_cast<std::size_t>(quotas[0]), present_strata[0]);
    } else {
      SelectionOrderMatrix sub = generate_som_for_sizes(quotas, grng);
      for (int local : sub.group_at_stage)
        stratum_seq[g].push_back(present_strata[static_cast<std::size_t>(local)]);
    }
  }
  std::vector<std::size_t> cursor(static_cast<std::size_t>(G), 0);
  som.group_at_stage = base.group_at_stage;
  som.stratum_at_stage.reserve(base.group_at_stage.size());
  for (int g : base.group_at_stage)
    som.stratum_at_stage.push_back(stratum_seq[g][cursor[static_cast<std::size_t>(g)]++]);
  return som;
}

}  // namespace fsm
