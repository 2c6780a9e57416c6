// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepmim/checkpoint.hpp"
#include "deepmim/data.hpp"
#include "deepmim/ops.hpp"
#include "deepmim/optim.hpp"
#include "deepmim/targets.hpp"

namespace deepmim {

enum class TrainMode { deepmim, deepmim_hybrid, baseline_mae, supervised };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  Index epochs = 10;
  Index batch_size = 16;
  /// Peak learning rate per 256 images; the effective rate is base_lr * batch / 256.
  double base_lr = 1.5e-4;
  double weight_decay = 0.05;
  /// Unset: 5% of all steps.
  std::optional<double> warmup_epochs;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::deepmim;
  std::optional<Index> freeze_first_k;
  std::optional<Index> reinit_last_k;
  /// Caps the schedule length; 0 runs every epoch in full.
  std::int64_t max_steps = 0;

  void validate() const;
  double peak_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
};

/// Step counts derived from a TrainConfig and a dataset size.
struct Schedule {
  std::int64_t steps_per_epoch = 0;
  std::int64_t total_steps = 0;
  std::int64_t warmup_steps = 0;

  static Schedule make(const TrainConfig& config, Index n_samples);
  /// Learning rate of 1-based step s.
  double lr(const TrainConfig& config, std::int64_t step) const;
};

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  std::map<Index, double> decoder_loss;
  double total = 0.0;
  /// Set on the last step of each epoch when validation data is present.
  std::optional<double> val_loss;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// CSV columns: step,lr,loss_total,loss_dec_<id>...,val_loss.
std::string step_log_header(std::span<const Index> decoder_ids);
std::string step_log_row(const StepRecord& record, std::span<const Index> decoder_ids);

template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> total;
  std::map<Index, Var<Scalar>> per_decoder;
};

/// Unweighted sum over decoders, in ascending id order, of masked MSEs.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const std::map<Index, Var<Scalar>>& preds,
                                 const std::map<Index, Tensor<Scalar>>& targets, std::span<const MaskPlan> plans);

/// Full forward pass of the encoder and every decoder, then total_loss.
template <typename Scalar>
LossBreakdown<Scalar> pretrain_loss(const BoundParams<Scalar>& p, const ModelConfig& config,
                                    const Tensor<Scalar>& images, const std::map<Index, Tensor<Scalar>>& targets,
                                    std::span<const MaskPlan> plans);

/// Permutation of [0, n) used in a given epoch.
std::vector<Index> epoch_order(std::uint64_t seed, std::int64_t epoch, Index n);

/// Mask stream of training epoch e is 1 + e; validation uses stream 0.
inline constexpr std::uint64_t kValidationMaskStream = 0;

struct PretrainOptions {
  const HybridGenerator* generator = nullptr;
  const FeatureFile* features = nullptr;
  const Dataset* validation = nullptr;
  /// Continue from a saved state instead of a fresh initialization.
  const Checkpoint* resume = nullptr;
  /// Stop after this step (keeps the schedule of the full run); 0 runs to the end.
  std::int64_t halt_after = 0;
  /// Where the last good state is written if a step turns non-finite.
  std::string last_good_path;
  std::function<void(const StepRecord&)> on_step;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  /// (epoch, final-decoder validation loss), 1-based epochs.
  std::vector<std::pair<Index, double>> val_curve;
};

/// Raised when training stops on a non-finite loss or gradient.
class TrainingAborted : public NumericError {
 public:
  using NumericError::NumericError;
};

/// The model config the trainer actually builds for a mode (baseline MAE drops taps).
ModelConfig effective_config(const ModelConfig& config, TrainMode mode);

PretrainResult pretrain(const ModelConfig& config, const TrainConfig& train, const TargetSpecs& specs,
                        const Dataset& data, const PretrainOptions& options = {});

/// Final-decoder masked MSE over a dataset with masks fixed by mask_seed.
double validation_loss(const ModelConfig& config, const Params<float>& params, const TargetSpec& final_spec,
                       const Dataset& data, std::uint64_t mask_seed, const TargetSources& sources = {},
                       Index chunk = 32);

struct ClassifierResult {
  double accuracy = 0.0;
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
};

/// Encoder parameters that receive no update when the first k blocks are frozen.
bool frozen_by_first_k(const std::string& name, Index k, Index depth);

/// Adds an average-pool + linear head and trains on labeled data, honoring
/// freeze_first_k or reinit_last_k; accuracy is measured on `eval`.
ClassifierResult finetune(const Checkpoint& pretrained, const Dataset& train, const Dataset& eval,
                          const TrainConfig& config);

/// Linear head on frozen, token-averaged output of block `tap` (the final,
/// normalized tokens when tap == depth), standardized per channel.
ClassifierResult linear_probe(const Checkpoint& pretrained, Index tap, const Dataset& train, const Dataset& eval,
                              const TrainConfig& config);

/// Token-averaged features [n, D] of one block for unmasked images.
Tensor<float> pooled_features(const ModelConfig& config, const Params<float>& params, const Dataset& data, Index block,
                              Index chunk = 32);

/// Fraction of rows whose arg-max logit equals the label.
double accuracy(const Tensor<float>& logits, std::span<const int> labels);

}  // namespace deepmim
