// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "deepmim/autodiff.hpp"
#include "deepmim/masking.hpp"

namespace deepmim {

// Differentiable primitives. Every op records its output on the tape of its
// first argument; inputs must share that tape. Token tensors are laid out
// [batch, tokens, channels] and row-major throughout.

/// [..., k] x [k, n] -> [..., n]
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);

/// x W + b with x [..., in], W [in, out], b [out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

/// Elementwise product of equal shapes.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);

/// x [B, T, D] plus y [T, D] broadcast over the batch.
template <typename Scalar>
Var<Scalar> add_broadcast(const Var<Scalar>& x, const Var<Scalar>& y);

/// Softmax over the last axis, stabilized by subtracting the row max.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-6));

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x);

/// Sum of all elements, as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x);

/// [B, T, D] -> [B, D], averaging over tokens.
template <typename Scalar>
Var<Scalar> mean_tokens(const Var<Scalar>& x);

/// Selects rows[b] (each the same length) out of x[b] for x [B, N, D].
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const std::vector<Index>> rows);

/// Scatters visible tokens [B, n_visible, D] back onto the full grid [B, N, D],
/// filling masked positions with the learned token [D].
template <typename Scalar>
Var<Scalar> fill_masked(const Var<Scalar>& visible, const Var<Scalar>& mask_token,
                        std::span<const MaskPlan> plans);

/// Scaled dot-product self attention split into heads. q, k, v are [B, T, D]
/// already projected; the result is the concatenation of per-head outputs.
/// When probs is non-null it receives the attention weights [B, heads, T, T].
template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                 Index heads, Tensor<Scalar>* probs = nullptr);

/// Mean squared error over masked positions of each sample only.
template <typename Scalar>
Var<Scalar> mse_masked(const Var<Scalar>& pred, const Tensor<Scalar>& target,
                       std::span<const MaskPlan> plans);

/// Mean softmax cross-entropy of logits [B, C].
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels);

/// Differentiable visible-row selection; gradients scatter back to source rows.
template <typename Scalar>
Var<Scalar> gather_visible(const Var<Scalar>& x, std::span<const MaskPlan> plans) {
  const auto rows = visible_rows(plans);
  return gather_rows(x, std::span<const std::vector<Index>>(rows));
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

}  // namespace deepmim
