// SPDX-License-Identifier: Apache-2.0
#include "deepmim/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace deepmim {

Index masked_count(Index n_patches, double ratio) {
  return static_cast<Index>(std::round(ratio * static_cast<double>(n_patches)));
}

MaskPlan MaskPlan::from_masked(Index n_patches, std::vector<Index> masked, double ratio) {
  if (n_patches <= 0) throw DimensionError("mask plan needs at least one patch");
  std::sort(masked.begin(), masked.end());
  if (std::adjacent_find(masked.begin(), masked.end()) != masked.end())
    throw DimensionError("mask plan: duplicate masked index");
  if (!masked.empty() && (masked.front() < 0 || masked.back() >= n_patches))
    throw DimensionError("mask plan: masked index out of range for " + std::to_string(n_patches) + " patches");
  if (masked.empty() || static_cast<Index>(masked.size()) == n_patches)
    throw DimensionError("mask plan: visible and masked sets must both be non-empty (" +
                         std::to_string(masked.size()) + " of " + std::to_string(n_patches) + " masked)");
  MaskPlan plan;
  plan.n_patches = n_patches;
  plan.ratio = ratio;
  plan.visible.reserve(static_cast<std::size_t>(n_patches) - masked.size());
  auto it = masked.begin();
  for (Index i = 0; i < n_patches; ++i) {
    if (it != masked.end() && *it == i)
      ++it;
    else
      plan.visible.push_back(i);
  }
  plan.masked = std::move(masked);
  return plan;
}

MaskPlan sample_mask(Index n_patches, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DimensionError("mask ratio must lie in (0, 1), got " + std::to_string(ratio));
  const Index count = masked_count(n_patches, ratio);
  if (count <= 0 || count >= n_patches)
    throw DimensionError("mask ratio " + std::to_string(ratio) + " leaves an empty side on " +
                         std::to_string(n_patches) + " patches");
  std::vector<Index> order(static_cast<std::size_t>(n_patches));
  std::iota(order.begin(), order.end(), Index{0});
  // partial Fisher-Yates: the first `count` slots are a uniform subset
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_patches - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  order.resize(static_cast<std::size_t>(count));
  return MaskPlan::from_masked(n_patches, std::move(order), ratio);
}

std::vector<MaskPlan> sample_batch_masks(Index batch, Index n_patches, double ratio, std::uint64_t seed,
                                         std::uint64_t stream, std::span<const Index> sample_ids,
                                         const MaskingStrategy& strategy) {
  if (static_cast<Index>(sample_ids.size()) != batch) throw DimensionError("one sample id per batch entry required");
  std::vector<MaskPlan> plans;
  plans.reserve(static_cast<std::size_t>(batch));
  for (Index id : sample_ids) {
    Rng rng(derive_seed({seed, stream, static_cast<std::uint64_t>(id)}));
    plans.push_back(strategy.sample(n_patches, ratio, rng));
  }
  return plans;
}

std::vector<std::vector<Index>> visible_rows(std::span<const MaskPlan> plans) {
  std::vector<std::vector<Index>> rows;
  rows.reserve(plans.size());
  for (const auto& p : plans) rows.push_back(p.visible);
  return rows;
}

std::vector<std::vector<Index>> masked_rows(std::span<const MaskPlan> plans) {
  std::vector<std::vector<Index>> rows;
  rows.reserve(plans.size());
  for (const auto& p : plans) rows.push_back(p.masked);
  return rows;
}

namespace {

template <typename Scalar>
Tensor<Scalar> select_rows(const Tensor<Scalar>& x, std::span<const MaskPlan> plans, bool visible) {
  if (x.rank() != 3) throw DimensionError("row selection expects [B, N, D], got " + shape_str(x.shape()));
  const Index batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (static_cast<Index>(plans.size()) != batch) throw DimensionError("one plan per sample required");
  const Index k = static_cast<Index>(visible ? plans[0].visible.size() : plans[0].masked.size());
  Tensor<Scalar> out({batch, k, d});
  for (Index b = 0; b < batch; ++b) {
    const auto& p = plans[static_cast<std::size_t>(b)];
    if (p.n_patches != n)
      throw DimensionError("plan covers " + std::to_string(p.n_patches) + " patches, tensor has " + std::to_string(n));
    const auto& rows = visible ? p.visible : p.masked;
    if (static_cast<Index>(rows.size()) != k) throw DimensionError("plans select different row counts");
    for (Index j = 0; j < k; ++j) out.matrix().row(b * k + j) = x.matrix().row(b * n + rows[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> gather_visible(const Tensor<Scalar>& x, std::span<const MaskPlan> plans) {
  return select_rows(x, plans, true);
}

template <typename Scalar>
Tensor<Scalar> extract_masked(const Tensor<Scalar>& x, std::span<const MaskPlan> plans) {
  return select_rows(x, plans, false);
}

template Tensor<float> gather_visible(const Tensor<float>&, std::span<const MaskPlan>);
template Tensor<double> gather_visible(const Tensor<double>&, std::span<const MaskPlan>);
template Tensor<float> extract_masked(const Tensor<float>&, std::span<const MaskPlan>);
template Tensor<double> extract_masked(const Tensor<double>&, std::span<const MaskPlan>);

}  // namespace deepmim
