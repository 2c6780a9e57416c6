// SPDX-License-Identifier: Apache-2.0
#include "deepmim/targets.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

#include "deepmim/binary_io.hpp"

namespace deepmim {

std::string to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::pixel: return "pixel";
    case TargetKind::hog: return "hog";
    case TargetKind::feature_file: return "feature_file";
  }
  return "?";
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "pixel") return TargetKind::pixel;
  if (s == "hog") return TargetKind::hog;
  if (s == "feature_file") return TargetKind::feature_file;
  throw ConfigError("unknown target kind '" + s + "'");
}

void TargetSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("blending ratio " + std::to_string(alpha) + " outside [0, 1]");
  if (alpha < 1.0 && !generator_checkpoint)
    throw ConfigError("blending ratio " + std::to_string(alpha) + " < 1 requires a generator checkpoint");
  if (kind == TargetKind::feature_file && alpha != 1.0)
    throw ConfigError("feature-file targets cannot be blended (alpha must be 1)");
}

TargetSpecs default_target_specs(const ModelConfig& config, TargetKind kind, bool hybrid,
                                 std::optional<std::string> generator_checkpoint) {
  TargetSpecs specs;
  const auto& taps = config.tap_indices;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    TargetSpec s;
    s.kind = kind;
    s.normalize_per_patch = config.norm_pix_target;
    if (hybrid) {
      s.alpha = static_cast<double>(i) / static_cast<double>(taps.size());
      s.generator_checkpoint = generator_checkpoint;
    }
    specs[taps[i]] = s;
  }
  TargetSpec last;
  last.kind = kind;
  last.normalize_per_patch = config.norm_pix_target;
  specs[config.final_id()] = last;
  return specs;
}

std::vector<double> parse_alpha_schedule(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto slash = item.find('/');
    try {
      double v = slash == std::string::npos ? std::stod(item)
                                            : std::stod(item.substr(0, slash)) / std::stod(item.substr(slash + 1));
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid blending ratio '" + item + "' in alpha schedule");
    }
  }
  if (out.empty()) throw ConfigError("empty alpha schedule");
  return out;
}

Tensor<float> pixel_target(const Tensor<float>& images, Index patch_size, bool normalize_per_patch) {
  Tensor<float> t = patchify(images, patch_size);
  if (!normalize_per_patch) return t;
  auto m = t.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    const Eigen::ArrayXd row = m.row(r).transpose().array().cast<double>();
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    m.row(r) = ((row - mean) / std::sqrt(var + kPatchNormEps)).cast<float>().matrix().transpose();
  }
  return t;
}

Tensor<float> hog_target(const Tensor<float>& images, Index p) {
  if (images.rank() != 4 || images.dim(1) != 3) throw DimensionError("hog expects [B, 3, H, W]");
  if (p % kHogCellsPerSide != 0) throw DimensionError("hog needs an even patch size");
  const Index batch = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (h % p != 0 || w % p != 0) throw DimensionError("hog: image not divisible into patches");
  const Index gw = w / p, cell = p / kHogCellsPerSide;
  Tensor<float> out({batch, (h / p) * gw, kHogDim});
  RowMatrix<float> gray(h, w);
  for (Index b = 0; b < batch; ++b) {
    const float* img = images.ptr() + b * 3 * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index i = y * w + x;
        gray(y, x) = 0.299f * img[i] + 0.587f * img[h * w + i] + 0.114f * img[2 * h * w + i];
      }
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        // central differences with replicated borders
        const float gx = gray(y, std::min(x + 1, w - 1)) - gray(y, std::max<Index>(x - 1, 0));
        const float gy = gray(std::min(y + 1, h - 1), x) - gray(std::max<Index>(y - 1, 0), x);
        const float mag = std::sqrt(gx * gx + gy * gy);
        if (mag == 0.0f) continue;
        double angle = std::atan2(static_cast<double>(gy), static_cast<double>(gx)) * 180.0 / std::numbers::pi;
        if (angle < 0.0) angle += 180.0;
        if (angle >= 180.0) angle -= 180.0;
        const Index bin = std::min<Index>(static_cast<Index>(angle / (180.0 / kHogBins)), kHogBins - 1);
        const Index patch = (y / p) * gw + x / p;
        const Index c = ((y % p) / cell) * kHogCellsPerSide + (x % p) / cell;
        out.matrix()(b * out.dim(1) + patch, c * kHogBins + bin) += mag;
      }
  }
  auto m = out.matrix();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < kHogCellsPerSide * kHogCellsPerSide; ++c) {
      auto seg = m.row(r).segment(c * kHogBins, kHogBins);
      seg /= seg.norm() + 1e-6f;
    }
  return out;
}

namespace {
constexpr char kFeatureMagic[4] = {'D', 'M', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint64_t kFeatureHeaderBytes = 4 + 4 * 4;
}  // namespace

FeatureFile::FeatureFile(std::string path) : path_(std::move(path)) {
  BinaryReader in(path_);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw IoError(path_ + ": not a feature file (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kFeatureVersion)
    throw IoError(path_ + ": unsupported feature file version " + std::to_string(version));
  n_samples_ = in.get<std::uint32_t>();
  n_patches_ = in.get<std::uint32_t>();
  feat_dim_ = in.get<std::uint32_t>();
  if (n_patches_ == 0 || feat_dim_ == 0) throw IoError(path_ + ": empty feature records");
}

void FeatureFile::write(const std::string& path, std::span<const Tensor<float>> records) {
  if (records.empty()) throw IoError("feature file needs at least one record");
  const Shape shape = records.front().shape();
  if (shape.size() != 2) throw DimensionError("feature records must be [n_patches, feat_dim]");
  BinaryWriter out(path);
  out.bytes(kFeatureMagic, 4);
  out.put<std::uint32_t>(kFeatureVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(shape[0]));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(shape[1]));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].shape() != shape)
      throw DimensionError("feature record " + std::to_string(i) + " has shape " + shape_str(records[i].shape()) +
                           ", expected " + shape_str(shape));
    out.floats(records[i].ptr(), static_cast<std::size_t>(records[i].size()));
  }
  out.close();
}

Tensor<float> FeatureFile::read(Index sample) const {
  if (sample < 0 || sample >= n_samples_)
    throw IoError(path_ + ": sample index " + std::to_string(sample) + " out of range (" +
                  std::to_string(n_samples_) + " records)");
  BinaryReader in(path_);
  const auto record = static_cast<std::uint64_t>(n_patches_ * feat_dim_);
  in.seek(kFeatureHeaderBytes + static_cast<std::uint64_t>(sample) * record * sizeof(float));
  Tensor<float> t({n_patches_, feat_dim_});
  try {
    in.floats(t.ptr(), record);
  } catch (const IoError& e) {
    throw IoError("sample index " + std::to_string(sample) + ": " + e.what());
  }
  return t;
}

Tensor<float> feature_file_target(const FeatureFile& file, std::span<const Index> sample_ids, Index n_patches) {
  if (file.n_patches() != n_patches)
    throw ConfigError(file.path() + ": feature records cover " + std::to_string(file.n_patches()) +
                      " patches but the model has " + std::to_string(n_patches));
  const Index batch = static_cast<Index>(sample_ids.size());
  Tensor<float> out({batch, n_patches, file.feat_dim()});
  const Index stride = n_patches * file.feat_dim();
  for (Index b = 0; b < batch; ++b) out.data().segment(b * stride, stride) = file.read(sample_ids[static_cast<std::size_t>(b)]).data();
  return out;
}

Tensor<float> generate_reconstruction(const HybridGenerator& gen, const Tensor<float>& images,
                                      std::span<const MaskPlan> plans) {
  const auto& c = gen.config;
  if (images.rank() != 4 || images.dim(2) != c.image_size || images.dim(3) != c.image_size)
    throw DimensionError("generator expects " + std::to_string(c.image_size) + "-pixel images, got " +
                         shape_str(images.shape()));
  if (c.prediction_dim() != c.patch_dim()) throw ConfigError("generator does not predict pixels");
  const Tensor<float> x = patchify(images, c.patch_size);
  Tape<float> tape;
  BoundParams<float> frozen(tape, gen.params, [](const std::string&) { return false; });
  auto enc = encoder_forward(frozen, c, tape.constant(x), plans);
  const Tensor<float>& pred = decoder_forward(frozen, c, c.final_id(), enc.final_tokens, plans).value();

  Tensor<float> composite = x;
  const Index n = x.dim(1);
  for (Index b = 0; b < x.dim(0); ++b)
    for (Index i : plans[static_cast<std::size_t>(b)].masked) {
      const Index r = b * n + i;
      auto src = pred.matrix().row(r);
      if (c.norm_pix_target) {
        const auto orig = x.matrix().row(r).array();
        const float mean = orig.mean();
        const float std = std::sqrt((orig - mean).square().mean() + kPatchNormEps);
        composite.matrix().row(r) = (src.array() * std + mean).matrix();
      } else {
        composite.matrix().row(r) = src;
      }
    }
  return unpatchify(composite, c.patch_size, c.image_size);
}

Tensor<float> blend(const Tensor<float>& x, const Tensor<float>& x_hat, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("blending ratio " + std::to_string(alpha) + " outside [0, 1]");
  if (x.shape() != x_hat.shape())
    throw DimensionError("blend shapes disagree: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  return Tensor<float>(x.shape(), (alpha * x.data().cast<double>() + (1.0 - alpha) * x_hat.data().cast<double>()).cast<float>());
}

TargetSet build_targets(const TargetSpecs& specs, const ModelConfig& config, const Tensor<float>& images,
                        std::span<const MaskPlan> plans, const TargetSources& sources) {
  const auto ids = config.decoder_ids();
  if (specs.size() != ids.size()) throw ConfigError("one target spec per decoder required");
  bool needs_generator = false;
  for (Index id : ids) {
    auto it = specs.find(id);
    if (it == specs.end()) throw ConfigError("no target spec for decoder " + std::to_string(id));
    it->second.validate();
    needs_generator = needs_generator || it->second.alpha < 1.0;
  }

  TargetSet out;
  auto x = std::make_shared<const Tensor<float>>(images);
  if (needs_generator) {
    if (!sources.generator) throw ConfigError("hybrid targets requested but no generator loaded");
    out.reconstruction = std::make_shared<const Tensor<float>>(generate_reconstruction(*sources.generator, images, plans));
  }

  std::map<double, std::shared_ptr<const Tensor<float>>> blended;
  auto blended_image = [&](double alpha) {
    if (alpha == 1.0) return x;
    if (alpha == 0.0) return out.reconstruction;
    auto& slot = blended[alpha];
    if (!slot) slot = std::make_shared<const Tensor<float>>(blend(*x, *out.reconstruction, alpha));
    return slot;
  };

  std::map<std::tuple<TargetKind, double, bool>, std::shared_ptr<const Tensor<float>>> cache;
  for (Index id : ids) {
    const auto& spec = specs.at(id);
    auto& slot = cache[{spec.kind, spec.alpha, spec.kind == TargetKind::pixel && spec.normalize_per_patch}];
    if (!slot) {
      switch (spec.kind) {
        case TargetKind::pixel:
          slot = std::make_shared<const Tensor<float>>(
              pixel_target(*blended_image(spec.alpha), config.patch_size, spec.normalize_per_patch));
          break;
        case TargetKind::hog:
          slot = std::make_shared<const Tensor<float>>(hog_target(*blended_image(spec.alpha), config.patch_size));
          break;
        case TargetKind::feature_file:
          if (!sources.features) throw ConfigError("feature-file targets requested but no feature file loaded");
          if (static_cast<Index>(sources.sample_ids.size()) != images.dim(0))
            throw ConfigError("feature-file targets need one dataset index per batch row");
          slot = std::make_shared<const Tensor<float>>(
              feature_file_target(*sources.features, sources.sample_ids, config.n_patches()));
          break;
      }
    }
    if (slot->dim(2) != config.prediction_dim())
      throw ConfigError("decoder " + std::to_string(id) + " predicts " + std::to_string(config.prediction_dim()) +
                        " channels but its target has " + std::to_string(slot->dim(2)));
    out.by_decoder[id] = slot;
  }
  return out;
}

}  // namespace deepmim
