// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "deepmim/masking.hpp"
#include "deepmim/model.hpp"

namespace deepmim {

enum class TargetKind { pixel, hog, feature_file };

std::string to_string(TargetKind kind);
TargetKind parse_target_kind(const std::string& s);

/// Reconstruction target of one decoder: t = alpha x + (1 - alpha) x_hat,
/// then the kind-specific transform. alpha < 1 needs a hybrid generator.
struct TargetSpec {
  TargetKind kind = TargetKind::pixel;
  double alpha = 1.0;
  bool normalize_per_patch = true;
  std::optional<std::string> generator_checkpoint;

  void validate() const;
};

/// Decoder id -> spec.
using TargetSpecs = std::map<Index, TargetSpec>;

/// One spec per decoder of `config`. Hybrid mode assigns alpha = i / M to the
/// i-th of M taps (0, 1/3, 2/3 for three taps) and 1 to the final decoder;
/// otherwise every alpha is 1.
TargetSpecs default_target_specs(const ModelConfig& config, TargetKind kind, bool hybrid,
                                 std::optional<std::string> generator_checkpoint = std::nullopt);

/// Parses a comma list such as "0,1/3,2/3,1" (one entry per decoder, final last).
std::vector<double> parse_alpha_schedule(const std::string& s);

/// A previously trained model used frozen to reconstruct masked images.
struct HybridGenerator {
  ModelConfig config;
  Params<float> params;
};

inline constexpr Index kHogBins = 9;
inline constexpr Index kHogCellsPerSide = 2;
inline constexpr Index kHogDim = kHogBins * kHogCellsPerSide * kHogCellsPerSide;
inline constexpr float kPatchNormEps = 1e-6f;

/// Patchified pixels, optionally standardized per patch.
Tensor<float> pixel_target(const Tensor<float>& images, Index patch_size, bool normalize_per_patch);

/// Unsigned 9-bin gradient-orientation histograms over 2x2 cells per patch,
/// L2-normalized per cell: [B, N, 36].
Tensor<float> hog_target(const Tensor<float>& images, Index patch_size);

/// Precomputed per-sample features: magic "DMFT", u32 version, u32 n_samples,
/// u32 n_patches, u32 feat_dim, then little-endian f32 records.
class FeatureFile {
 public:
  explicit FeatureFile(std::string path);

  /// Writes records, each [n_patches, feat_dim].
  static void write(const std::string& path, std::span<const Tensor<float>> records);

  Index n_samples() const { return n_samples_; }
  Index n_patches() const { return n_patches_; }
  Index feat_dim() const { return feat_dim_; }
  const std::string& path() const { return path_; }

  Tensor<float> read(Index sample) const;

 private:
  std::string path_;
  Index n_samples_ = 0;
  Index n_patches_ = 0;
  Index feat_dim_ = 0;
};

/// [B, N, feat_dim] for the given dataset samples; the file's patch count must
/// equal the model's.
Tensor<float> feature_file_target(const FeatureFile& file, std::span<const Index> sample_ids, Index n_patches);

/// The generator's image x_hat: masked patches come from its final decoder
/// (de-normalized with the original patch statistics when it was trained on
/// normalized pixels), visible patches are copied from the input.
Tensor<float> generate_reconstruction(const HybridGenerator& generator, const Tensor<float>& images,
                                      std::span<const MaskPlan> plans);

/// alpha x + (1 - alpha) x_hat, elementwise.
Tensor<float> blend(const Tensor<float>& x, const Tensor<float>& x_hat, double alpha);

struct TargetSet {
  std::map<Index, std::shared_ptr<const Tensor<float>>> by_decoder;
  /// x_hat when any decoder blends, else null.
  std::shared_ptr<const Tensor<float>> reconstruction;
};

struct TargetSources {
  const HybridGenerator* generator = nullptr;
  const FeatureFile* features = nullptr;
  /// Dataset indices of the batch rows (feature-file targets only).
  std::span<const Index> sample_ids;
};

/// Builds every decoder's target for one batch. x_hat is generated at most
/// once and shared; identical (kind, alpha, normalization) specs share one tensor.
TargetSet build_targets(const TargetSpecs& specs, const ModelConfig& config, const Tensor<float>& images,
                        std::span<const MaskPlan> plans, const TargetSources& sources = {});

}  // namespace deepmim
