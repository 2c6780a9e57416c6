// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepmim/autodiff.hpp"
#include "deepmim/masking.hpp"

namespace deepmim {

/// Architecture of the encoder and its decoders. Decoders are identified by
/// the 1-based encoder block they read from; the primary decoder reads the
/// final block and has id == depth.
struct ModelConfig {
  Index image_size = 32;
  Index patch_size = 8;
  Index embed_dim = 64;
  Index depth = 4;
  Index num_heads = 4;
  double mlp_ratio = 4.0;
  Index decoder_dim = 32;
  Index decoder_depth = 4;
  Index decoder_heads = 4;
  /// Intermediate blocks that receive an extra decoder; excludes the final block.
  std::vector<Index> tap_indices;
  double mask_ratio = 0.75;
  bool shared_decoder = false;
  /// Width of every decoder's prediction; 0 means raw pixels (3 * patch^2).
  Index target_dim = 0;
  /// Whether pixel targets are standardized per patch. Recorded here because
  /// a checkpoint used as a hybrid generator must be de-normalized the same way.
  bool norm_pix_target = true;
  /// Classes of the optional classification head; 0 when absent.
  Index num_classes = 0;

  static constexpr Index kChannels = 3;

  Index grid() const { return image_size / patch_size; }
  Index n_patches() const { return grid() * grid(); }
  Index patch_dim() const { return kChannels * patch_size * patch_size; }
  Index prediction_dim() const { return target_dim > 0 ? target_dim : patch_dim(); }
  Index mlp_hidden() const { return static_cast<Index>(mlp_ratio * static_cast<double>(embed_dim)); }
  Index decoder_mlp_hidden() const { return static_cast<Index>(mlp_ratio * static_cast<double>(decoder_dim)); }
  Index final_id() const { return depth; }

  /// Tap ids followed by the final decoder id, ascending.
  std::vector<Index> decoder_ids() const;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Nearest valid blocks to depth * {1/2, 2/3, 5/6}; {6, 8, 10} at depth 12.
  static std::vector<Index> default_taps(Index depth);
  /// Half the encoder width, rounded to a multiple of the decoder head count.
  static Index default_decoder_dim(Index embed_dim, Index decoder_heads);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Flat named parameter store; std::map keeps iteration order deterministic.
template <typename Scalar>
using Params = std::map<std::string, Tensor<Scalar>>;

std::string encoder_block_prefix(Index block);
/// Parameter prefix of a decoder, honoring shared-decoder mode.
std::string decoder_prefix(const ModelConfig& config, Index decoder_id);

/// Name and shape of every parameter the configuration defines.
std::map<std::string, Shape> param_shapes(const ModelConfig& config);
Index param_count(const ModelConfig& config);

/// Deterministic per-parameter initialization: each tensor draws from its own
/// stream keyed by (seed, name), so adding a decoder never perturbs the rest.
template <typename Scalar>
Params<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

/// Re-draws the last k encoder blocks from the init distribution.
template <typename Scalar>
Params<Scalar> reinit_last_k(const Params<Scalar>& params, const ModelConfig& config, Index k, std::uint64_t seed);

/// Adds (or replaces) the classification head for `classes` labels.
template <typename Scalar>
void attach_classifier(Params<Scalar>& params, ModelConfig& config, Index classes, std::uint64_t seed);

/// [B, 3, H, W] -> [B, N, 3 p^2]; raster patch order, channel-major within a patch.
template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& images, Index patch_size);

template <typename Scalar>
Tensor<Scalar> unpatchify(const Tensor<Scalar>& patches, Index patch_size, Index image_size);

/// Parameters recorded as leaves of one tape.
template <typename Scalar>
class BoundParams {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  /// Every parameter for which `trainable` holds becomes a gradient leaf.
  BoundParams(Tape<Scalar>& tape, const Params<Scalar>& params, const Predicate& trainable = nullptr);

  Var<Scalar> operator()(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) > 0; }
  Tape<Scalar>& tape() const { return *tape_; }

  /// Gradients of trainable parameters after tape().backward().
  Params<Scalar> grads() const;

 private:
  Tape<Scalar>* tape_;
  std::map<std::string, Var<Scalar>> vars_;
};

template <typename Scalar>
struct EncoderOutput {
  /// Final block output after the final LayerNorm; unset when stopped early.
  Var<Scalar> final_tokens;
  /// Raw output of each tap block (after both residual additions).
  std::map<Index, Var<Scalar>> tap_tokens;
  /// Raw output of every block that ran, when requested.
  std::vector<Var<Scalar>> block_outputs;
  /// Per block [B, heads, T, T], only in analysis mode.
  std::vector<Tensor<Scalar>> attn_probs;
};

struct EncoderOptions {
  bool analysis = false;
  bool keep_blocks = false;
  /// Stop after this block (1-based); 0 runs the whole encoder.
  Index stop_after = 0;
};

/// Pre-norm Transformer block: x + attn(ln1 x), then + mlp(ln2 x).
template <typename Scalar>
Var<Scalar> transformer_block(const BoundParams<Scalar>& p, const std::string& prefix, const Var<Scalar>& x,
                              Index heads, Tensor<Scalar>* attn_probs = nullptr);

/// Embeds all patches, adds positions, keeps the visible rows of each plan
/// (all rows when plans is empty) and runs the blocks.
template <typename Scalar>
EncoderOutput<Scalar> encoder_forward(const BoundParams<Scalar>& p, const ModelConfig& config,
                                      const Var<Scalar>& patches, std::span<const MaskPlan> plans,
                                      const EncoderOptions& options = {});

/// Lightweight decoder: projects visible tokens, inserts the mask token at
/// masked positions, adds decoder positions and predicts every patch.
template <typename Scalar>
Var<Scalar> decoder_forward(const BoundParams<Scalar>& p, const ModelConfig& config, Index decoder_id,
                            const Var<Scalar>& tokens, std::span<const MaskPlan> plans);

/// Average-pooled tokens through the classification head: [B, T, D] -> [B, C].
template <typename Scalar>
Var<Scalar> classifier_forward(const BoundParams<Scalar>& p, const Var<Scalar>& tokens);

}  // namespace deepmim
