// SPDX-License-Identifier: Apache-2.0
#include "deepmim/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "deepmim/ops.hpp"
#include "deepmim/rng.hpp"

namespace deepmim {

namespace {

constexpr double kInitStd = 0.02;

void add_block_shapes(std::map<std::string, Shape>& shapes, const std::string& prefix, Index dim, Index hidden) {
  for (const char* ln : {".ln1", ".ln2"}) {
    shapes[prefix + ln + ".gamma"] = {dim};
    shapes[prefix + ln + ".beta"] = {dim};
  }
  for (const char* w : {"q", "k", "v", "o"}) {
    shapes[prefix + ".attn.w" + w] = {dim, dim};
    shapes[prefix + ".attn.b" + w] = {dim};
  }
  shapes[prefix + ".mlp.fc1.w"] = {dim, hidden};
  shapes[prefix + ".mlp.fc1.b"] = {hidden};
  shapes[prefix + ".mlp.fc2.w"] = {hidden, dim};
  shapes[prefix + ".mlp.fc2.b"] = {dim};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename Scalar>
Tensor<Scalar> draw_param(const std::string& name, const Shape& shape, std::uint64_t seed) {
  if (ends_with(name, ".gamma")) return Tensor<Scalar>::constant(shape, Scalar(1));
  if (shape.size() == 1 && !ends_with(name, "mask_token")) return Tensor<Scalar>(shape);
  Tensor<Scalar> t(shape);
  Rng rng(derive_seed({seed, hash_name(name)}));
  const bool plain_normal = ends_with(name, "mask_token");
  for (Index i = 0; i < t.size(); ++i)
    t[i] = static_cast<Scalar>(plain_normal ? rng.normal() * kInitStd : rng.truncated_normal(kInitStd));
  return t;
}

}  // namespace

std::vector<Index> ModelConfig::decoder_ids() const {
  std::vector<Index> ids = tap_indices;
  ids.push_back(final_id());
  return ids;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " + std::to_string(patch_size));
  if (depth < 1) fail("depth must be at least 1");
  if (decoder_depth < 1) fail("decoder_depth must be at least 1");
  if (num_heads < 1 || embed_dim % num_heads != 0)
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
  if (decoder_heads < 1 || decoder_dim % decoder_heads != 0)
    fail("decoder_dim " + std::to_string(decoder_dim) + " is not divisible by decoder_heads " +
         std::to_string(decoder_heads));
  if (mlp_hidden() < 1 || decoder_mlp_hidden() < 1) fail("mlp_ratio too small");
  for (std::size_t i = 0; i < tap_indices.size(); ++i) {
    const Index tap = tap_indices[i];
    if (tap < 1 || tap >= depth)
      fail("tap index " + std::to_string(tap) + " out of range [1, " + std::to_string(depth - 1) + "]");
    if (i > 0 && tap <= tap_indices[i - 1]) fail("tap indices must be strictly increasing");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  const Index masked = masked_count(n_patches(), mask_ratio);
  if (masked < 1 || masked >= n_patches()) fail("mask_ratio leaves an empty visible or masked set");
  if (target_dim < 0 || num_classes < 0) fail("negative target_dim or num_classes");
}

std::vector<Index> ModelConfig::default_taps(Index depth) {
  std::set<Index> taps;
  for (double f : {1.0 / 2.0, 2.0 / 3.0, 5.0 / 6.0}) {
    const auto tap = static_cast<Index>(std::round(static_cast<double>(depth) * f));
    if (depth >= 2) taps.insert(std::clamp<Index>(tap, 1, depth - 1));
  }
  return {taps.begin(), taps.end()};
}

Index ModelConfig::default_decoder_dim(Index embed_dim, Index decoder_heads) {
  const Index half = embed_dim / 2;
  const Index rounded = (half + decoder_heads / 2) / decoder_heads * decoder_heads;
  return std::max(rounded, decoder_heads);
}

std::string encoder_block_prefix(Index block) { return "encoder.block" + std::to_string(block); }

std::string decoder_prefix(const ModelConfig& config, Index decoder_id) {
  const auto ids = config.decoder_ids();
  if (std::find(ids.begin(), ids.end(), decoder_id) == ids.end())
    throw ConfigError("unknown decoder id " + std::to_string(decoder_id));
  if (config.shared_decoder) return "decoder.shared";
  return decoder_id == config.final_id() ? "decoder.final" : "decoder.tap" + std::to_string(decoder_id);
}

std::map<std::string, Shape> param_shapes(const ModelConfig& config) {
  config.validate();
  std::map<std::string, Shape> shapes;
  const Index d = config.embed_dim;
  const Index n = config.n_patches();
  shapes["encoder.patch_embed.w"] = {config.patch_dim(), d};
  shapes["encoder.patch_embed.b"] = {d};
  shapes["encoder.pos"] = {n, d};
  for (Index b = 1; b <= config.depth; ++b) add_block_shapes(shapes, encoder_block_prefix(b), d, config.mlp_hidden());
  shapes["encoder.norm.gamma"] = {d};
  shapes["encoder.norm.beta"] = {d};

  std::set<std::string> prefixes;
  for (Index id : config.decoder_ids()) prefixes.insert(decoder_prefix(config, id));
  const Index dd = config.decoder_dim;
  for (const auto& prefix : prefixes) {
    shapes[prefix + ".embed.w"] = {d, dd};
    shapes[prefix + ".embed.b"] = {dd};
    shapes[prefix + ".mask_token"] = {dd};
    shapes[prefix + ".pos"] = {n, dd};
    for (Index b = 1; b <= config.decoder_depth; ++b)
      add_block_shapes(shapes, prefix + ".block" + std::to_string(b), dd, config.decoder_mlp_hidden());
    shapes[prefix + ".norm.gamma"] = {dd};
    shapes[prefix + ".norm.beta"] = {dd};
    shapes[prefix + ".head.w"] = {dd, config.prediction_dim()};
    shapes[prefix + ".head.b"] = {config.prediction_dim()};
  }
  if (config.num_classes > 0) {
    shapes["head.w"] = {d, config.num_classes};
    shapes["head.b"] = {config.num_classes};
  }
  return shapes;
}

Index param_count(const ModelConfig& config) {
  Index total = 0;
  for (const auto& [name, shape] : param_shapes(config)) total += shape_size(shape);
  return total;
}

template <typename Scalar>
Params<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  Params<Scalar> params;
  for (const auto& [name, shape] : param_shapes(config)) params.emplace(name, draw_param<Scalar>(name, shape, seed));
  return params;
}

template <typename Scalar>
Params<Scalar> reinit_last_k(const Params<Scalar>& params, const ModelConfig& config, Index k, std::uint64_t seed) {
  if (k < 0 || k > config.depth)
    throw ConfigError("reinit_last_k: k=" + std::to_string(k) + " outside [0, " + std::to_string(config.depth) + "]");
  Params<Scalar> out = params;
  for (Index b = config.depth - k + 1; b <= config.depth; ++b) {
    const std::string prefix = encoder_block_prefix(b) + ".";
    for (auto& [name, value] : out)
      if (name.compare(0, prefix.size(), prefix) == 0) value = draw_param<Scalar>(name, value.shape(), seed);
  }
  return out;
}

template <typename Scalar>
void attach_classifier(Params<Scalar>& params, ModelConfig& config, Index classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("classifier needs at least 2 classes");
  config.num_classes = classes;
  params["head.w"] = draw_param<Scalar>("head.w", {config.embed_dim, classes}, seed);
  params["head.b"] = Tensor<Scalar>(Shape{classes});
}

template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& images, Index p) {
  if (images.rank() != 4 || images.dim(1) != ModelConfig::kChannels)
    throw DimensionError("patchify expects [B, 3, H, W], got " + shape_str(images.shape()));
  const Index batch = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (p <= 0 || h % p != 0 || w % p != 0)
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible into " +
                         std::to_string(p) + "-pixel patches");
  const Index gh = h / p, gw = w / p, c = ModelConfig::kChannels;
  Tensor<Scalar> out({batch, gh * gw, c * p * p});
  Scalar* dst = out.ptr();
  for (Index b = 0; b < batch; ++b)
    for (Index py = 0; py < gh; ++py)
      for (Index px = 0; px < gw; ++px)
        for (Index ch = 0; ch < c; ++ch)
          for (Index y = 0; y < p; ++y) {
            const Scalar* src = images.ptr() + ((b * c + ch) * h + py * p + y) * w + px * p;
            dst = std::copy(src, src + p, dst);
          }
  return out;
}

template <typename Scalar>
Tensor<Scalar> unpatchify(const Tensor<Scalar>& patches, Index p, Index image_size) {
  const Index c = ModelConfig::kChannels;
  if (p <= 0 || image_size % p != 0) throw DimensionError("unpatchify: image size not divisible by patch size");
  const Index g = image_size / p;
  if (patches.rank() != 3 || patches.dim(1) != g * g || patches.dim(2) != c * p * p)
    throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not tile a " +
                         std::to_string(image_size) + "-pixel image");
  const Index batch = patches.dim(0);
  Tensor<Scalar> out({batch, c, image_size, image_size});
  const Scalar* src = patches.ptr();
  for (Index b = 0; b < batch; ++b)
    for (Index py = 0; py < g; ++py)
      for (Index px = 0; px < g; ++px)
        for (Index ch = 0; ch < c; ++ch)
          for (Index y = 0; y < p; ++y) {
            Scalar* dst = out.ptr() + ((b * c + ch) * image_size + py * p + y) * image_size + px * p;
            std::copy(src, src + p, dst);
            src += p;
          }
  return out;
}

template <typename Scalar>
BoundParams<Scalar>::BoundParams(Tape<Scalar>& tape, const Params<Scalar>& params, const Predicate& trainable)
    : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value, !trainable || trainable(name)));
}

template <typename Scalar>
Var<Scalar> BoundParams<Scalar>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

template <typename Scalar>
Params<Scalar> BoundParams<Scalar>::grads() const {
  Params<Scalar> out;
  for (const auto& [name, var] : vars_)
    if (var.requires_grad()) out.emplace(name, tape_->grad(var));
  return out;
}

template <typename Scalar>
Var<Scalar> transformer_block(const BoundParams<Scalar>& p, const std::string& prefix, const Var<Scalar>& x,
                              Index heads, Tensor<Scalar>* attn_probs) {
  constexpr Scalar eps = Scalar(1e-6);
  auto h = layer_norm(x, p(prefix + ".ln1.gamma"), p(prefix + ".ln1.beta"), eps);
  auto q = linear(h, p(prefix + ".attn.wq"), p(prefix + ".attn.bq"));
  auto k = linear(h, p(prefix + ".attn.wk"), p(prefix + ".attn.bk"));
  auto v = linear(h, p(prefix + ".attn.wv"), p(prefix + ".attn.bv"));
  auto a = multi_head_attention(q, k, v, heads, attn_probs);
  auto x1 = add(x, linear(a, p(prefix + ".attn.wo"), p(prefix + ".attn.bo")));
  auto h2 = layer_norm(x1, p(prefix + ".ln2.gamma"), p(prefix + ".ln2.beta"), eps);
  auto m = gelu(linear(h2, p(prefix + ".mlp.fc1.w"), p(prefix + ".mlp.fc1.b")));
  return add(x1, linear(m, p(prefix + ".mlp.fc2.w"), p(prefix + ".mlp.fc2.b")));
}

template <typename Scalar>
EncoderOutput<Scalar> encoder_forward(const BoundParams<Scalar>& p, const ModelConfig& config,
                                      const Var<Scalar>& patches, std::span<const MaskPlan> plans,
                                      const EncoderOptions& options) {
  const Index last = options.stop_after > 0 ? options.stop_after : config.depth;
  if (last > config.depth)
    throw ConfigError("encoder: stop_after " + std::to_string(last) + " beyond depth " + std::to_string(config.depth));
  for (Index tap : config.tap_indices)
    if (tap < 1 || tap >= config.depth) throw ConfigError("encoder: tap index " + std::to_string(tap) + " out of range");
  const auto& shape = patches.shape();
  if (shape.size() != 3 || shape[1] != config.n_patches() || shape[2] != config.patch_dim())
    throw DimensionError("encoder expects patches [B, " + std::to_string(config.n_patches()) + ", " +
                         std::to_string(config.patch_dim()) + "], got " + shape_str(shape));

  auto x = linear(patches, p("encoder.patch_embed.w"), p("encoder.patch_embed.b"));
  x = add_broadcast(x, p("encoder.pos"));
  if (!plans.empty()) x = gather_visible(x, plans);

  EncoderOutput<Scalar> out;
  for (Index b = 1; b <= last; ++b) {
    Tensor<Scalar> probs;
    x = transformer_block(p, encoder_block_prefix(b), x, config.num_heads, options.analysis ? &probs : nullptr);
    if (options.analysis) out.attn_probs.push_back(std::move(probs));
    if (options.keep_blocks) out.block_outputs.push_back(x);
    if (std::find(config.tap_indices.begin(), config.tap_indices.end(), b) != config.tap_indices.end())
      out.tap_tokens.emplace(b, x);
  }
  if (last == config.depth) out.final_tokens = layer_norm(x, p("encoder.norm.gamma"), p("encoder.norm.beta"), Scalar(1e-6));
  return out;
}

template <typename Scalar>
Var<Scalar> decoder_forward(const BoundParams<Scalar>& p, const ModelConfig& config, Index decoder_id,
                            const Var<Scalar>& tokens, std::span<const MaskPlan> plans) {
  const std::string prefix = decoder_prefix(config, decoder_id);
  for (const auto& plan : plans)
    if (plan.n_patches != config.n_patches())
      throw DimensionError("decoder: plan covers " + std::to_string(plan.n_patches) + " patches, model has " +
                           std::to_string(config.n_patches()));
  auto x = linear(tokens, p(prefix + ".embed.w"), p(prefix + ".embed.b"));
  x = fill_masked(x, p(prefix + ".mask_token"), plans);
  x = add_broadcast(x, p(prefix + ".pos"));
  for (Index b = 1; b <= config.decoder_depth; ++b)
    x = transformer_block(p, prefix + ".block" + std::to_string(b), x, config.decoder_heads);
  x = layer_norm(x, p(prefix + ".norm.gamma"), p(prefix + ".norm.beta"), Scalar(1e-6));
  return linear(x, p(prefix + ".head.w"), p(prefix + ".head.b"));
}

template <typename Scalar>
Var<Scalar> classifier_forward(const BoundParams<Scalar>& p, const Var<Scalar>& tokens) {
  return linear(mean_tokens(tokens), p("head.w"), p("head.b"));
}

#define DEEPMIM_INSTANTIATE_MODEL(S)                                                                            \
  template Params<S> init_params<S>(const ModelConfig&, std::uint64_t);                                         \
  template Params<S> reinit_last_k(const Params<S>&, const ModelConfig&, Index, std::uint64_t);                 \
  template void attach_classifier(Params<S>&, ModelConfig&, Index, std::uint64_t);                              \
  template Tensor<S> patchify(const Tensor<S>&, Index);                                                         \
  template Tensor<S> unpatchify(const Tensor<S>&, Index, Index);                                                \
  template class BoundParams<S>;                                                                                \
  template Var<S> transformer_block(const BoundParams<S>&, const std::string&, const Var<S>&, Index, Tensor<S>*); \
  template EncoderOutput<S> encoder_forward(const BoundParams<S>&, const ModelConfig&, const Var<S>&,           \
                                            std::span<const MaskPlan>, const EncoderOptions&);                  \
  template Var<S> decoder_forward(const BoundParams<S>&, const ModelConfig&, Index, const Var<S>&,              \
                                  std::span<const MaskPlan>);                                                   \
  template Var<S> classifier_forward(const BoundParams<S>&, const Var<S>&);

DEEPMIM_INSTANTIATE_MODEL(float)
DEEPMIM_INSTANTIATE_MODEL(double)

}  // namespace deepmim
