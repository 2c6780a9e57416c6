// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deepmim/data.hpp"
#include "deepmim/model.hpp"
#include "deepmim/targets.hpp"
#include "deepmim/training.hpp"

namespace deepmim {

/// Raw `key = value` entries with where each came from ("file:line" or "--flag").
struct KeyValue {
  std::string value;
  std::string origin;
};
using KeyValues = std::map<std::string, KeyValue>;

/// Parses line-based `key = value` text. '#' starts a comment. Duplicate keys,
/// lines without '=', and unknown keys are ConfigErrors naming the line.
KeyValues parse_key_values(const std::string& text, const std::string& source);

/// Every key a run configuration may contain.
const std::set<std::string>& known_config_keys();

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  TargetKind target_kind = TargetKind::pixel;
  std::optional<std::vector<double>> alpha_schedule;
  std::optional<std::string> generator_checkpoint;
  std::optional<std::string> feature_file;

  /// Image directory; a synthetic set is generated when absent.
  std::optional<std::string> data_dir;
  std::optional<std::string> val_data_dir;
  SyntheticSpec synthetic;
  /// Tail fraction held out for validation when no val_data_dir is given.
  double holdout_fraction = 0.25;

  std::string out_dir;
  std::optional<std::string> checkpoint;
  std::optional<std::string> compare_checkpoint;
  std::optional<std::string> resume;

  /// Blocks probed by `probe`; empty means the final block.
  std::vector<Index> probe_layers;
  /// `probe_layers = taps`: every tap of the checkpoint plus the final block.
  bool probe_at_taps = false;
  /// Block of the checkpoint compared against every block of compare_checkpoint.
  Index cross_layer = 0;
  Index reconstruct_count = 8;

  /// Keys given explicitly, by config file or flag.
  std::set<std::string> present;

  bool has(const std::string& key) const { return present.count(key) > 0; }
  /// ConfigError unless every key is present.
  void require(std::initializer_list<const char*> keys) const;
};

/// Interprets parsed entries. Missing keys take defaults; taps default to the
/// standard tap rule in the deep-supervised modes and to none otherwise.
RunConfig make_run_config(const KeyValues& entries);

/// Reads a config file (optional) and applies overrides on top, each override
/// replacing the file's entry for the same key.
RunConfig load_run_config(const std::optional<std::string>& path, const KeyValues& overrides = {});

}  // namespace deepmim
