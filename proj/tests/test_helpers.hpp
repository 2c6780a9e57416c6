// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "deepmim/rng.hpp"
#include "deepmim/tensor.hpp"

namespace deepmim::testing {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Tensor<Scalar> t(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

}  // namespace deepmim::testing
