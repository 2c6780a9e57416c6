// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "deepmim/model.hpp"
#include "deepmim/optim.hpp"

namespace deepmim {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or reuse a run. Randomness during training is
/// a stateless function of (seed, epoch, sample), so the seed is the whole
/// RNG state.
struct Checkpoint {
  ModelConfig config;
  Params<float> params;
  std::optional<AdamState> optimizer;
  std::uint64_t rng_seed = 0;
  std::int64_t step = 0;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

/// Layout: "DMIM", u32 version, model config, parameter table (u32 count;
/// per entry u32 name length, name bytes, u8 rank, u32 dims, f32 payload),
/// u8 optimizer flag [u64 t, moment tables m and v], u64 seed, u64 step.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace deepmim
