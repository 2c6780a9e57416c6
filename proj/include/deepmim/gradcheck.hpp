// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "deepmim/autodiff.hpp"
#include "deepmim/rng.hpp"

namespace deepmim {

struct GradCheckOptions {
  double step = 1e-3;
  /// Coordinates sampled per parameter tensor; 0 checks every coordinate.
  Index coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error, so coordinates whose true
  /// gradient is zero are judged on absolute error below this scale.
  double rel_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Index coords_checked = 0;
};

template <typename Scalar>
using ScalarFunction = std::function<Var<Scalar>(Tape<Scalar>&, std::span<const Var<Scalar>>)>;

/// Compares tape gradients of f at params against central differences.
template <typename Scalar>
GradCheckResult grad_check(const ScalarFunction<Scalar>& f, std::vector<Tensor<Scalar>> params,
                           const GradCheckOptions& opt = {}) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor<Scalar>>* grads) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p, with_grad));
    Var<Scalar> out = f(tape, vars);
    const Scalar value = out.value().item();
    if (!std::isfinite(static_cast<double>(value))) throw NumericError("grad_check: objective is not finite");
    if (grads) {
      tape.backward(out);
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return static_cast<double>(value);
  };

  std::vector<Tensor<Scalar>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  Rng rng(opt.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Index n = params[p].size();
    std::vector<Index> coords;
    if (opt.coords_per_param <= 0 || opt.coords_per_param >= n) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (Index c = 0; c < opt.coords_per_param; ++c) coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    }
    for (Index i : coords) {
      const Scalar original = params[p][i];
      params[p][i] = static_cast<Scalar>(original + opt.step);
      const double plus = evaluate(false, nullptr);
      params[p][i] = static_cast<Scalar>(original - opt.step);
      const double minus = evaluate(false, nullptr);
      params[p][i] = original;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double exact = static_cast<double>(analytic[p][i]);
      const double abs_err = std::abs(numeric - exact);
      const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(exact), opt.rel_floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, rel_err);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace deepmim
