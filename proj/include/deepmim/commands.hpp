// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deepmim/analysis.hpp"
#include "deepmim/run_config.hpp"
#include "deepmim/training.hpp"

namespace deepmim {

/// The configured image source before any split.
Dataset load_source(const RunConfig& rc);

struct Splits {
  Dataset train;
  Dataset val;
};

/// val_data_dir when given, otherwise the tail holdout_fraction of the source.
Splits load_splits(const RunConfig& rc);

/// Writes the synthetic set (PPMs and labels.tsv) to out_dir.
Dataset cmd_gen_data(const RunConfig& rc);

/// Writes checkpoint.ckpt, steps.csv and val_loss.csv to out_dir.
PretrainResult cmd_pretrain(const RunConfig& rc);

/// Writes finetune.ckpt, finetune_steps.csv and finetune.csv (accuracy).
ClassifierResult cmd_finetune(const RunConfig& rc);

/// Writes probe.csv (layer,accuracy); returns the same rows.
std::vector<std::pair<Index, double>> cmd_probe(const RunConfig& rc);

/// Writes the analysis CSVs for the checkpoint on the validation split.
AnalysisReport cmd_analyze(const RunConfig& rc);

/// Writes recon_<name> and masked_<name> PPMs for the first reconstruct_count
/// images under out_dir/reconstruct; returns the reconstructions [n, 3, S, S].
Tensor<float> cmd_reconstruct(const RunConfig& rc);

}  // namespace deepmim
