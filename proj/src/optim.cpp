// SPDX-License-Identifier: Apache-2.0
#include "deepmim/optim.hpp"

#include <cmath>
#include <numbers>

namespace deepmim {

namespace {

bool same_params(const Params<float>& a, const Params<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || !t.identical(it->second)) return false;
  }
  return true;
}

}  // namespace

bool operator==(const AdamState& a, const AdamState& b) { return a.t == b.t && same_params(a.m, b.m) && same_params(a.v, b.v); }

bool decay_exempt(const std::string& name, const Tensor<float>& param) {
  const std::string suffix = ".pos";
  const bool pos = name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  return param.rank() <= 1 || pos;
}

void adamw_step(Params<float>& params, const Params<float>& grads, AdamState& state, double lr,
                const AdamWOptions& options) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("gradient for unknown parameter " + name);
    if (g.shape() != it->second.shape())
      throw DimensionError("gradient of " + name + " is " + shape_str(g.shape()) + ", parameter is " +
                           shape_str(it->second.shape()));
    if (!g.all_finite()) throw NumericError("non-finite gradient in " + name);
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.t));
  const auto b1 = static_cast<float>(options.beta1), b2 = static_cast<float>(options.beta2);
  const auto step = static_cast<float>(lr / c1);
  const auto root_c2 = static_cast<float>(std::sqrt(c2));
  const auto eps = static_cast<float>(options.eps);
  for (const auto& [name, g] : grads) {
    auto& w = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, w.shape());
    auto [vit, v_new] = state.v.try_emplace(name, w.shape());
    auto& m = mit->second.data();
    auto& v = vit->second.data();
    m = b1 * m + (1.0f - b1) * g.data();
    v = b2 * v + (1.0f - b2) * g.data().square();
    if (options.weight_decay != 0.0 && !decay_exempt(name, w))
      w.data() *= static_cast<float>(1.0 - lr * options.weight_decay);
    w.data() -= step * m / (v.sqrt() / root_c2 + eps);
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
  if (step < 0 || step > total_steps) throw ConfigError("schedule step " + std::to_string(step) + " outside [0, " +
                                                        std::to_string(total_steps) + "]");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::int64_t span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace deepmim
