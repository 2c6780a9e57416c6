// SPDX-License-Identifier: Apache-2.0
#include "deepmim/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace deepmim {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const KeyValue& kv, const std::string& expected) {
  throw ConfigError(kv.origin + ": invalid value '" + kv.value + "' for " + key + " (expected " + expected + ")");
}

std::int64_t to_int(const std::string& key, const KeyValue& kv) {
  std::int64_t v = 0;
  const auto* end = kv.value.data() + kv.value.size();
  const auto [ptr, ec] = std::from_chars(kv.value.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, kv, "an integer");
  return v;
}

double to_double(const std::string& key, const KeyValue& kv) {
  try {
    std::size_t used = 0;
    const double v = std::stod(kv.value, &used);
    if (used != kv.value.size() || !std::isfinite(v)) bad_value(key, kv, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, kv, "a number");
  }
}

bool to_bool(const std::string& key, const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1" || kv.value == "yes") return true;
  if (kv.value == "false" || kv.value == "0" || kv.value == "no") return false;
  bad_value(key, kv, "true or false");
}

std::vector<Index> to_index_list(const std::string& key, const KeyValue& kv) {
  std::vector<Index> out;
  if (kv.value == "none" || kv.value.empty()) return out;
  std::stringstream ss(kv.value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, {trim(item), kv.origin}));
  return out;
}

}  // namespace

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      // model
      "image_size", "patch_size", "embed_dim", "depth", "num_heads", "mlp_ratio", "decoder_dim", "decoder_depth",
      "decoder_heads", "taps", "mask_ratio", "shared_decoder", "norm_pix_target",
      // training
      "epochs", "batch_size", "base_lr", "weight_decay", "warmup_epochs", "seed", "mode", "max_steps",
      "freeze_first_k", "reinit_last_k",
      // targets
      "target_kind", "alpha_schedule", "generator_checkpoint", "feature_file",
      // data
      "data_dir", "val_data_dir", "n_samples", "n_classes", "data_seed", "holdout_fraction",
      // paths
      "out_dir", "checkpoint", "compare_checkpoint", "resume",
      // analysis
      "probe_layers", "cross_layer", "reconstruct_count"};
  return keys;
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream in(text);
  std::string raw;
  for (int line_no = 1; std::getline(in, raw); ++line_no) {
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (!known_config_keys().count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (out.count(key)) throw ConfigError(where + ": duplicate key '" + key + "' (first at " + out[key].origin + ")");
    out[key] = {trim(line.substr(eq + 1)), where};
  }
  return out;
}

void RunConfig::require(std::initializer_list<const char*> keys) const {
  for (const char* k : keys)
    if (!has(k)) throw ConfigError(std::string("missing required key '") + k + "'");
}

RunConfig make_run_config(const KeyValues& entries) {
  RunConfig rc;
  for (const auto& [key, kv] : entries) {
    if (!known_config_keys().count(key)) throw ConfigError(kv.origin + ": unknown key '" + key + "'");
    rc.present.insert(key);
  }
  auto get = [&](const char* key, auto&& convert, auto& field) {
    if (auto it = entries.find(key); it != entries.end()) field = convert(key, it->second);
  };
  auto as_int = [](const std::string& k, const KeyValue& kv) { return static_cast<Index>(to_int(k, kv)); };
  auto as_string = [](const std::string&, const KeyValue& kv) { return kv.value; };

  ModelConfig& m = rc.model;
  get("image_size", as_int, m.image_size);
  get("patch_size", as_int, m.patch_size);
  get("embed_dim", as_int, m.embed_dim);
  get("depth", as_int, m.depth);
  get("num_heads", as_int, m.num_heads);
  get("mlp_ratio", to_double, m.mlp_ratio);
  get("decoder_depth", as_int, m.decoder_depth);
  get("decoder_heads", as_int, m.decoder_heads);
  m.decoder_dim = ModelConfig::default_decoder_dim(m.embed_dim, m.decoder_heads);
  get("decoder_dim", as_int, m.decoder_dim);
  get("mask_ratio", to_double, m.mask_ratio);
  get("shared_decoder", to_bool, m.shared_decoder);
  get("norm_pix_target", to_bool, m.norm_pix_target);

  TrainConfig& t = rc.train;
  get("epochs", as_int, t.epochs);
  get("batch_size", as_int, t.batch_size);
  get("base_lr", to_double, t.base_lr);
  get("weight_decay", to_double, t.weight_decay);
  if (auto it = entries.find("warmup_epochs"); it != entries.end()) t.warmup_epochs = to_double("warmup_epochs", it->second);
  if (auto it = entries.find("seed"); it != entries.end()) {
    const auto v = to_int("seed", it->second);
    if (v < 0) bad_value("seed", it->second, "a non-negative integer");
    t.seed = static_cast<std::uint64_t>(v);
  }
  if (auto it = entries.find("mode"); it != entries.end()) {
    try {
      t.mode = parse_train_mode(it->second.value);
    } catch (const ConfigError&) {
      bad_value("mode", it->second, "deepmim, deepmim_hybrid, baseline_mae or supervised");
    }
  }
  get("max_steps", to_int, t.max_steps);
  if (auto it = entries.find("freeze_first_k"); it != entries.end()) t.freeze_first_k = as_int("freeze_first_k", it->second);
  if (auto it = entries.find("reinit_last_k"); it != entries.end()) t.reinit_last_k = as_int("reinit_last_k", it->second);

  if (auto it = entries.find("taps"); it != entries.end()) {
    m.tap_indices = it->second.value == "default" ? ModelConfig::default_taps(m.depth) : to_index_list("taps", it->second);
  } else if (t.mode == TrainMode::deepmim || t.mode == TrainMode::deepmim_hybrid) {
    m.tap_indices = ModelConfig::default_taps(m.depth);
  }

  if (auto it = entries.find("target_kind"); it != entries.end()) {
    try {
      rc.target_kind = parse_target_kind(it->second.value);
    } catch (const ConfigError&) {
      bad_value("target_kind", it->second, "pixel, hog or feature_file");
    }
  }
  if (auto it = entries.find("alpha_schedule"); it != entries.end()) {
    try {
      rc.alpha_schedule = parse_alpha_schedule(it->second.value);
    } catch (const ConfigError& e) {
      throw ConfigError(it->second.origin + ": " + e.what());
    }
  }
  if (rc.target_kind == TargetKind::hog) m.target_dim = kHogDim;

  auto opt_string = [&](const char* key, std::optional<std::string>& field) {
    if (auto it = entries.find(key); it != entries.end()) field = it->second.value;
  };
  opt_string("generator_checkpoint", rc.generator_checkpoint);
  opt_string("feature_file", rc.feature_file);
  opt_string("data_dir", rc.data_dir);
  opt_string("val_data_dir", rc.val_data_dir);
  opt_string("checkpoint", rc.checkpoint);
  opt_string("compare_checkpoint", rc.compare_checkpoint);
  opt_string("resume", rc.resume);
  get("out_dir", as_string, rc.out_dir);

  rc.synthetic.image_size = m.image_size;
  get("n_samples", as_int, rc.synthetic.n_samples);
  get("n_classes", as_int, rc.synthetic.n_classes);
  if (auto it = entries.find("data_seed"); it != entries.end()) {
    const auto v = to_int("data_seed", it->second);
    if (v < 0) bad_value("data_seed", it->second, "a non-negative integer");
    rc.synthetic.seed = static_cast<std::uint64_t>(v);
  }
  get("holdout_fraction", to_double, rc.holdout_fraction);
  if (auto it = entries.find("holdout_fraction"); it != entries.end() && !(rc.holdout_fraction > 0.0 && rc.holdout_fraction < 1.0))
    bad_value("holdout_fraction", it->second, "a fraction in (0, 1)");

  if (auto it = entries.find("probe_layers"); it != entries.end()) {
    if (it->second.value == "taps")
      rc.probe_at_taps = true;
    else
      rc.probe_layers = to_index_list("probe_layers", it->second);
  }
  get("cross_layer", as_int, rc.cross_layer);
  get("reconstruct_count", as_int, rc.reconstruct_count);
  if (rc.reconstruct_count < 1) bad_value("reconstruct_count", entries.at("reconstruct_count"), "a positive integer");
  return rc;
}

RunConfig load_run_config(const std::optional<std::string>& path, const KeyValues& overrides) {
  KeyValues entries;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read config " + *path);
    std::stringstream ss;
    ss << in.rdbuf();
    entries = parse_key_values(ss.str(), *path);
  }
  for (const auto& [key, kv] : overrides) entries[key] = kv;
  return make_run_config(entries);
}

}  // namespace deepmim
