// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "deepmim/model.hpp"

namespace deepmim {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// First and second moments keyed like the parameters, plus the step count.
struct AdamState {
  Params<float> m;
  Params<float> v;
  std::int64_t t = 0;

  friend bool operator==(const AdamState& a, const AdamState& b);
};

/// Biases, LayerNorm affine terms, mask tokens (all rank <= 1) and learned
/// position tables skip weight decay.
bool decay_exempt(const std::string& name, const Tensor<float>& param);

/// One AdamW update of every parameter that has a gradient; parameters
/// without one are left untouched. All gradients are checked for finiteness
/// before anything is modified.
void adamw_step(Params<float>& params, const Params<float>& grads, AdamState& state, double lr,
                const AdamWOptions& options = {});

/// Linear warmup from 0 to base_lr over warmup_steps, then half-cosine to 0
/// at total_steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr);

}  // namespace deepmim
