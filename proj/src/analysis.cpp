// SPDX-License-Identifier: Apache-2.0
#include "deepmim/analysis.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "deepmim/ops.hpp"
#include "deepmim/training.hpp"

namespace deepmim {

namespace {

void check_probe(const Dataset& probe) {
  if (probe.size() < kMinProbeImages)
    throw ConfigError("probe set has " + std::to_string(probe.size()) + " images, at least " +
                      std::to_string(kMinProbeImages) + " required");
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::vector<Eigen::MatrixXd> block_features(const ModelConfig& config, const Params<float>& params, const Dataset& probe,
                                            Index chunk) {
  if (probe.image_size() != config.image_size)
    throw DimensionError("probe images are " + std::to_string(probe.image_size()) + " pixels, model expects " +
                         std::to_string(config.image_size));
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(config.depth), Eigen::MatrixXd(probe.size(), config.embed_dim));
  EncoderOptions opt;
  opt.keep_blocks = true;
  for (Index start = 0; start < probe.size(); start += chunk) {
    std::vector<Index> rows;
    for (Index i = start; i < std::min(start + chunk, probe.size()); ++i) rows.push_back(i);
    Tape<float> tape;
    BoundParams<float> bound(tape, params, [](const std::string&) { return false; });
    auto enc = encoder_forward(bound, config, tape.constant(patchify(probe.batch(rows), config.patch_size)), {}, opt);
    for (std::size_t b = 0; b < enc.block_outputs.size(); ++b)
      out[b].middleRows(start, static_cast<Index>(rows.size())) =
          mean_tokens(enc.block_outputs[b]).value().matrix().cast<double>();
  }
  return out;
}

std::vector<double> cka_profile(const Checkpoint& ckpt, const Dataset& probe) {
  check_probe(probe);
  const auto feats = block_features(ckpt.config, ckpt.params, probe);
  std::vector<double> out;
  for (std::size_t l = 0; l + 1 < feats.size(); ++l) out.push_back(linear_cka(feats[l], feats.back()));
  out.push_back(1.0);
  return out;
}

std::vector<double> cross_cka(const Checkpoint& a, const Checkpoint& b, Index layer_a, const Dataset& probe) {
  check_probe(probe);
  if (a.config.image_size != b.config.image_size || a.config.patch_size != b.config.patch_size)
    throw DimensionError("cross_cka: patch grids differ (" + std::to_string(a.config.image_size) + "/" +
                         std::to_string(a.config.patch_size) + " vs " + std::to_string(b.config.image_size) + "/" +
                         std::to_string(b.config.patch_size) + ")");
  if (layer_a < 1 || layer_a > a.config.depth)
    throw ConfigError("layer " + std::to_string(layer_a) + " outside [1, " + std::to_string(a.config.depth) + "]");
  const auto fa = block_features(a.config, a.params, probe);
  const auto fb = block_features(b.config, b.params, probe);
  std::vector<double> out;
  for (const auto& f : fb) out.push_back(linear_cka(fa[static_cast<std::size_t>(layer_a - 1)], f));
  return out;
}

std::vector<HeadSimilarity> head_similarity(const Checkpoint& ckpt, const Dataset& probe, Index chunk) {
  check_probe(probe);
  const auto& config = ckpt.config;
  const Index heads = config.num_heads;
  if (heads < 2) throw ConfigError("head similarity needs at least 2 heads");
  const Index t = config.n_patches();
  std::vector<Eigen::MatrixXd> maps(static_cast<std::size_t>(config.depth), Eigen::MatrixXd::Zero(heads, t * t));
  EncoderOptions opt;
  opt.analysis = true;
  for (Index start = 0; start < probe.size(); start += chunk) {
    std::vector<Index> rows;
    for (Index i = start; i < std::min(start + chunk, probe.size()); ++i) rows.push_back(i);
    Tape<float> tape;
    BoundParams<float> bound(tape, ckpt.params, [](const std::string&) { return false; });
    auto enc = encoder_forward(bound, config, tape.constant(patchify(probe.batch(rows), config.patch_size)), {}, opt);
    for (std::size_t l = 0; l < enc.attn_probs.size(); ++l) {
      // [B, H, T, T] viewed as B * H rows of T * T
      Eigen::Map<const RowMatrix<float>> probs(enc.attn_probs[l].ptr(), static_cast<Index>(rows.size()) * heads, t * t);
      for (Index b = 0; b < static_cast<Index>(rows.size()); ++b)
        maps[l] += probs.middleRows(b * heads, heads).cast<double>();
    }
  }
  std::vector<HeadSimilarity> out;
  for (auto& m : maps) {
    m /= static_cast<double>(probe.size());
    const Eigen::VectorXd norms = m.rowwise().norm();
    HeadSimilarity h;
    h.cosine = (m * m.transpose()).array() / (norms * norms.transpose()).array();
    h.cosine.diagonal().setOnes();
    double sum = 0.0;
    for (Index i = 0; i < heads; ++i)
      for (Index j = i + 1; j < heads; ++j) sum += h.cosine(i, j);
    h.mean = sum / static_cast<double>(heads * (heads - 1) / 2);
    out.push_back(std::move(h));
  }
  return out;
}

double val_recon_loss(const Checkpoint& ckpt, const Dataset& data, std::uint64_t mask_seed, TargetKind kind) {
  TargetSpec spec;
  spec.kind = kind;
  spec.normalize_per_patch = ckpt.config.norm_pix_target;
  return validation_loss(ckpt.config, ckpt.params, spec, data, mask_seed);
}

void AnalysisReport::write(const std::string& dir) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  if (!cka_profile.empty()) {
    auto out = open_csv(fs::path(dir) / "cka_profile.csv");
    out << "layer,score\n";
    for (std::size_t l = 0; l < cka_profile.size(); ++l) out << l + 1 << ',' << fmt(cka_profile[l]) << '\n';
  }
  if (!cross_cka.empty()) {
    auto out = open_csv(fs::path(dir) / "cross_cka.csv");
    out << "layer_a,layer_b,score\n";
    for (std::size_t l = 0; l < cross_cka.size(); ++l) out << cross_layer_a << ',' << l + 1 << ',' << fmt(cross_cka[l]) << '\n';
  }
  if (!head_similarity.empty()) {
    auto out = open_csv(fs::path(dir) / "head_sim.csv");
    out << "layer,head_i,head_j,cosine\n";
    for (std::size_t l = 0; l < head_similarity.size(); ++l) {
      const auto& c = head_similarity[l].cosine;
      for (Index i = 0; i < c.rows(); ++i)
        for (Index j = i + 1; j < c.cols(); ++j) out << l + 1 << ',' << i << ',' << j << ',' << fmt(c(i, j)) << '\n';
    }
  }
  if (!val_loss.empty()) {
    auto out = open_csv(fs::path(dir) / "val_loss.csv");
    out << "epoch,loss\n";
    for (const auto& [epoch, loss] : val_loss) out << epoch << ',' << fmt(loss) << '\n';
  }
}

}  // namespace deepmim
