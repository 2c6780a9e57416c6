// SPDX-License-Identifier: Apache-2.0
#include "deepmim/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

namespace deepmim {

namespace fs = std::filesystem;

namespace {

fs::path out_path(const RunConfig& rc, const std::string& name) {
  if (rc.out_dir.empty()) throw ConfigError("missing required key 'out_dir'");
  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  if (ec) throw IoError("cannot create " + rc.out_dir + ": " + ec.message());
  return fs::path(rc.out_dir) / name;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

Checkpoint load_required(const std::optional<std::string>& path, const char* key) {
  if (!path) throw ConfigError(std::string("missing required key '") + key + "'");
  return load_checkpoint(*path);
}

void check_geometry(const ModelConfig& config, const Dataset& data, const std::string& what) {
  if (data.image_size() != config.image_size)
    throw DimensionError(what + ": images are [3, " + std::to_string(data.image_size()) + ", " +
                         std::to_string(data.image_size()) + "], model expects [3, " + std::to_string(config.image_size) +
                         ", " + std::to_string(config.image_size) + "]");
}

void write_classifier_log(const fs::path& path, const std::vector<StepRecord>& log) {
  auto out = open_out(path);
  out << step_log_header({}) << '\n';
  for (const auto& r : log) out << step_log_row(r, {}) << '\n';
}

}  // namespace

Dataset load_source(const RunConfig& rc) {
  return rc.data_dir ? load_image_dir(*rc.data_dir) : generate_synthetic(rc.synthetic);
}

Splits load_splits(const RunConfig& rc) {
  auto source = load_source(rc);
  if (rc.val_data_dir) return {std::move(source), load_image_dir(*rc.val_data_dir)};
  auto [train, val] = split_dataset(source, rc.holdout_fraction);
  return {std::move(train), std::move(val)};
}

Dataset cmd_gen_data(const RunConfig& rc) {
  if (rc.out_dir.empty()) throw ConfigError("missing required key 'out_dir'");
  auto data = generate_synthetic(rc.synthetic);
  save_image_dir(data, rc.out_dir);
  return data;
}

PretrainResult cmd_pretrain(const RunConfig& rc) {
  ModelConfig model = rc.model;
  const auto [train, val] = load_splits(rc);
  check_geometry(model, train, "pretrain");

  std::unique_ptr<FeatureFile> features;
  if (rc.target_kind == TargetKind::feature_file) {
    if (!rc.feature_file) throw ConfigError("target_kind = feature_file needs feature_file");
    features = std::make_unique<FeatureFile>(*rc.feature_file);
    model.target_dim = features->feat_dim();
  }
  const bool hybrid = rc.train.mode == TrainMode::deepmim_hybrid;
  auto specs = default_target_specs(model, rc.target_kind, hybrid, rc.generator_checkpoint);
  if (rc.alpha_schedule) {
    const auto ids = model.decoder_ids();
    if (rc.alpha_schedule->size() != ids.size())
      throw ConfigError("alpha schedule has " + std::to_string(rc.alpha_schedule->size()) + " entries for " +
                        std::to_string(ids.size()) + " decoders");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      specs[ids[i]].alpha = (*rc.alpha_schedule)[i];
      specs[ids[i]].generator_checkpoint = rc.generator_checkpoint;
    }
  }

  std::optional<HybridGenerator> generator;
  if (hybrid) {
    if (!rc.generator_checkpoint) throw ConfigError("mode = deepmim_hybrid needs generator_checkpoint");
    auto g = load_checkpoint(*rc.generator_checkpoint);
    generator = HybridGenerator{std::move(g.config), std::move(g.params)};
  }
  std::optional<Checkpoint> resume;
  if (rc.resume) resume = load_checkpoint(*rc.resume);

  const ModelConfig effective = effective_config(model, rc.train.mode);
  const std::vector<Index> ids =
      rc.train.mode == TrainMode::supervised ? std::vector<Index>{} : effective.decoder_ids();
  auto steps = open_out(out_path(rc, "steps.csv"));
  steps << step_log_header(ids) << '\n';

  PretrainOptions opt;
  opt.generator = generator ? &*generator : nullptr;
  opt.features = features.get();
  opt.validation = &val;
  opt.resume = resume ? &*resume : nullptr;
  opt.last_good_path = out_path(rc, "last_good.ckpt").string();
  opt.on_step = [&](const StepRecord& r) { steps << step_log_row(r, ids) << '\n' << std::flush; };
  auto res = pretrain(model, rc.train, specs, train, opt);

  save_checkpoint(res.checkpoint, out_path(rc, "checkpoint.ckpt").string());
  AnalysisReport report;
  report.val_loss = res.val_curve;
  report.write(rc.out_dir);
  return res;
}

ClassifierResult cmd_finetune(const RunConfig& rc) {
  const auto pre = load_required(rc.checkpoint, "checkpoint");
  const auto [train, val] = load_splits(rc);
  check_geometry(pre.config, train, "finetune");
  auto res = finetune(pre, train, val, rc.train);
  save_checkpoint(res.checkpoint, out_path(rc, "finetune.ckpt").string());
  write_classifier_log(out_path(rc, "finetune_steps.csv"), res.log);
  open_out(out_path(rc, "finetune.csv")) << "accuracy\n" << fmt(res.accuracy) << '\n';
  return res;
}

std::vector<std::pair<Index, double>> cmd_probe(const RunConfig& rc) {
  const auto pre = load_required(rc.checkpoint, "checkpoint");
  const auto [train, val] = load_splits(rc);
  check_geometry(pre.config, train, "probe");
  auto layers = rc.probe_at_taps ? pre.config.decoder_ids() : rc.probe_layers;
  if (layers.empty()) layers.push_back(pre.config.depth);
  TrainConfig t = rc.train;
  t.freeze_first_k.reset();
  t.reinit_last_k.reset();
  std::vector<std::pair<Index, double>> rows;
  for (Index layer : layers) rows.emplace_back(layer, linear_probe(pre, layer, train, val, t).accuracy);
  auto out = open_out(out_path(rc, "probe.csv"));
  out << "layer,accuracy\n";
  for (const auto& [layer, acc] : rows) out << layer << ',' << fmt(acc) << '\n';
  return rows;
}

AnalysisReport cmd_analyze(const RunConfig& rc) {
  const auto ckpt = load_required(rc.checkpoint, "checkpoint");
  const auto [train, val] = load_splits(rc);
  check_geometry(ckpt.config, val, "analyze");
  AnalysisReport report;
  report.cka_profile = cka_profile(ckpt, val);
  if (ckpt.config.num_heads >= 2) report.head_similarity = head_similarity(ckpt, val);
  if (rc.compare_checkpoint) {
    const auto other = load_checkpoint(*rc.compare_checkpoint);
    report.cross_layer_a = rc.cross_layer > 0 ? rc.cross_layer : ckpt.config.depth;
    report.cross_cka = cross_cka(ckpt, other, report.cross_layer_a, val);
  }
  const auto spe = Schedule::make(rc.train, train.size()).steps_per_epoch;
  const Index epoch = static_cast<Index>((ckpt.step + spe - 1) / spe);
  report.val_loss = {{epoch, val_recon_loss(ckpt, val, rc.train.seed)}};
  out_path(rc, "");
  report.write(rc.out_dir);
  return report;
}

Tensor<float> cmd_reconstruct(const RunConfig& rc) {
  const auto ckpt = load_required(rc.checkpoint, "checkpoint");
  const auto source = load_source(rc);
  check_geometry(ckpt.config, source, "reconstruct");
  std::vector<Index> rows;
  for (Index i = 0; i < std::min(rc.reconstruct_count, source.size()); ++i) rows.push_back(i);
  const auto data = source.subset(rows);

  HybridGenerator gen{ckpt.config, ckpt.params};
  if (rc.has("mask_ratio")) gen.config.mask_ratio = rc.model.mask_ratio;
  const auto images = data.batch(rows);
  const auto plans = sample_batch_masks(data.size(), gen.config.n_patches(), gen.config.mask_ratio, rc.train.seed,
                                        kValidationMaskStream, data.source_index);
  auto recon = generate_reconstruction(gen, images, plans);

  // input with masked patches greyed out
  auto patches = patchify(images, gen.config.patch_size);
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (Index p : plans[b].masked) patches.matrix().row(static_cast<Index>(b) * gen.config.n_patches() + p).setConstant(0.5f);
  const auto masked = unpatchify(patches, gen.config.patch_size, gen.config.image_size);

  const auto dir = out_path(rc, "reconstruct");
  fs::create_directories(dir);
  const Index s = gen.config.image_size;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& name = data.names[static_cast<std::size_t>(i)];
    Tensor<float> r({3, s, s}), m({3, s, s});
    r.data() = recon.data().segment(i * 3 * s * s, 3 * s * s);
    m.data() = masked.data().segment(i * 3 * s * s, 3 * s * s);
    write_ppm((dir / ("recon_" + name)).string(), r);
    write_ppm((dir / ("masked_" + name)).string(), m);
  }
  return recon;
}

}  // namespace deepmim
