// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <vector>

#include "deepmim/rng.hpp"
#include "deepmim/tensor.hpp"

namespace deepmim {

/// Partition of one sample's patch indices into visible and masked sets.
/// Both sets are sorted, disjoint, non-empty and cover 0..n_patches-1.
struct MaskPlan {
  Index n_patches = 0;
  std::vector<Index> visible;
  std::vector<Index> masked;
  double ratio = 0.0;

  /// Builds a plan from a masked set and validates every invariant.
  static MaskPlan from_masked(Index n_patches, std::vector<Index> masked, double ratio);

  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

/// round(ratio * n), ties away from zero.
Index masked_count(Index n_patches, double ratio);

/// Uniform subset without replacement.
MaskPlan sample_mask(Index n_patches, double ratio, Rng& rng);

/// Pluggable choice of which patches to hide.
class MaskingStrategy {
 public:
  virtual ~MaskingStrategy() = default;
  virtual MaskPlan sample(Index n_patches, double ratio, Rng& rng) const = 0;
};

class RandomMasking final : public MaskingStrategy {
 public:
  MaskPlan sample(Index n_patches, double ratio, Rng& rng) const override {
    return sample_mask(n_patches, ratio, rng);
  }
};

/// One plan per sample, each drawn from its own stream seeded by
/// (seed, stream, first_sample + b).
std::vector<MaskPlan> sample_batch_masks(Index batch, Index n_patches, double ratio,
                                         std::uint64_t seed, std::uint64_t stream,
                                         std::span<const Index> sample_ids,
                                         const MaskingStrategy& strategy = RandomMasking());

std::vector<std::vector<Index>> visible_rows(std::span<const MaskPlan> plans);
std::vector<std::vector<Index>> masked_rows(std::span<const MaskPlan> plans);

/// Plain-tensor selection of visible rows: [B, N, D] -> [B, |visible|, D].
template <typename Scalar>
Tensor<Scalar> gather_visible(const Tensor<Scalar>& x, std::span<const MaskPlan> plans);

/// The M(.) selection: [B, N, D] -> [B, |masked|, D].
template <typename Scalar>
Tensor<Scalar> extract_masked(const Tensor<Scalar>& x, std::span<const MaskPlan> plans);

}  // namespace deepmim
