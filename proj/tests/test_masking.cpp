// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "deepmim/ops.hpp"
#include "test_helpers.hpp"

using namespace deepmim;
using deepmim::testing::random_tensor;

TEST_CASE("sample_mask counts") {
  Rng rng(1);
  auto plan = sample_mask(196, 0.75, rng);
  CHECK(plan.masked.size() == 147);
  CHECK(plan.visible.size() == 49);
  CHECK(sample_mask(16, 0.75, rng).masked.size() == 12);
  CHECK(masked_count(4, 0.625) == 3);  // 2.5 rounds away from zero
  CHECK_THROWS_AS(sample_mask(4, 0.1, rng), DimensionError);
  CHECK_THROWS_AS(sample_mask(4, 0.95, rng), DimensionError);
  CHECK_THROWS_AS(sample_mask(4, 1.0, rng), DimensionError);
  CHECK_THROWS_AS(sample_mask(4, 0.0, rng), DimensionError);
}

TEST_CASE("mask plans partition the patch set") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto plan = sample_mask(37, 0.6, rng);
    std::vector<Index> all = plan.visible;
    all.insert(all.end(), plan.masked.begin(), plan.masked.end());
    std::sort(all.begin(), all.end());
    std::vector<Index> expected(37);
    std::iota(expected.begin(), expected.end(), Index{0});
    CHECK(all == expected);
    CHECK(std::is_sorted(plan.visible.begin(), plan.visible.end()));
    CHECK(std::is_sorted(plan.masked.begin(), plan.masked.end()));
  }
}

TEST_CASE("mask sampling is deterministic and exchangeable") {
  Rng a(7), b(7);
  CHECK(sample_mask(196, 0.75, a) == sample_mask(196, 0.75, b));

  // Monte-Carlo marginal frequency per index
  const int draws = 10000;
  std::vector<int> hits(16, 0);
  Rng rng(123);
  for (int i = 0; i < draws; ++i)
    for (Index m : sample_mask(16, 0.75, rng).masked) ++hits[static_cast<std::size_t>(m)];
  for (int h : hits) CHECK(std::abs(h / double(draws) - 0.75) <= 0.02);
}

TEST_CASE("batch masks come from per-sample streams") {
  const std::vector<Index> ids{3, 9};
  const std::vector<Index> swapped{9, 3};
  auto p = sample_batch_masks(2, 16, 0.75, 5, 0, ids);
  auto q = sample_batch_masks(2, 16, 0.75, 5, 0, swapped);
  CHECK(p[0] == q[1]);
  CHECK(p[1] == q[0]);
  CHECK_FALSE(sample_batch_masks(2, 16, 0.75, 5, 1, ids)[0] == p[0]);
}

TEST_CASE("MaskPlan rejects an empty masked set") {
  CHECK_THROWS_AS(MaskPlan::from_masked(4, {}, 0.0), DimensionError);
  CHECK_THROWS_AS(MaskPlan::from_masked(4, {0, 1, 2, 3}, 1.0), DimensionError);
  CHECK_THROWS_AS(MaskPlan::from_masked(4, {4}, 0.25), DimensionError);
  CHECK_THROWS_AS(MaskPlan::from_masked(4, {1, 1}, 0.5), DimensionError);
}

TEST_CASE("gather_visible and extract_masked") {
  const auto x = random_tensor<float>({2, 5, 3}, 3);
  const std::vector<MaskPlan> first_only{MaskPlan::from_masked(5, {1, 2, 3, 4}, 0.8),
                                         MaskPlan::from_masked(5, {1, 2, 3, 4}, 0.8)};
  const auto v = gather_visible(x, first_only);
  CHECK(v.shape() == Shape{2, 1, 3});
  CHECK(v.matrix().row(0) == x.matrix().row(0));
  CHECK(v.matrix().row(1) == x.matrix().row(5));

  Rng rng(4);
  std::vector<MaskPlan> plans{sample_mask(5, 0.6, rng), sample_mask(5, 0.6, rng)};
  const auto vis = gather_visible(x, plans);
  const auto msk = extract_masked(x, plans);
  // loop oracle, and together the rows form a permutation of the source rows
  for (Index b = 0; b < 2; ++b) {
    std::vector<Index> seen;
    for (std::size_t j = 0; j < plans[b].visible.size(); ++j) {
      CHECK(vis.matrix().row(b * 2 + Index(j)) == x.matrix().row(b * 5 + plans[b].visible[j]));
      seen.push_back(plans[b].visible[j]);
    }
    for (std::size_t j = 0; j < plans[b].masked.size(); ++j) {
      CHECK(msk.matrix().row(b * 3 + Index(j)) == x.matrix().row(b * 5 + plans[b].masked[j]));
      seen.push_back(plans[b].masked[j]);
    }
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<Index>{0, 1, 2, 3, 4});
  }

  std::vector<MaskPlan> wrong{MaskPlan::from_masked(6, {0}, 0.2), MaskPlan::from_masked(6, {0}, 0.2)};
  CHECK_THROWS_AS(gather_visible(x, wrong), DimensionError);
}

TEST_CASE("gather then scatter of ones marks the visible set") {
  Rng rng(8);
  std::vector<MaskPlan> plans{sample_mask(6, 0.5, rng), sample_mask(6, 0.5, rng)};
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({2, 6, 2}));
  auto y = sum(gather_visible(x, plans));
  t.backward(y);
  const auto g = t.grad(x);
  for (Index b = 0; b < 2; ++b)
    for (Index i = 0; i < 6; ++i) {
      const bool visible = std::binary_search(plans[b].visible.begin(), plans[b].visible.end(), i);
      for (Index d = 0; d < 2; ++d) CHECK(g.matrix()(b * 6 + i, d) == (visible ? 1.0 : 0.0));
    }
}
