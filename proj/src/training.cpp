// SPDX-License-Identifier: Apache-2.0
#include "deepmim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "deepmim/rng.hpp"

namespace deepmim {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

const auto kNothingTrainable = [](const std::string&) { return false; };

void check_geometry(const ModelConfig& config, const Dataset& data, const std::string& what) {
  if (data.image_size() != config.image_size)
    throw DimensionError(what + " images are " + std::to_string(data.image_size()) + "x" +
                         std::to_string(data.image_size()) + " but the model expects " +
                         std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
}

std::span<const Index> batch_rows(const std::vector<Index>& order, std::int64_t j, Index batch) {
  return {order.data() + j * batch, static_cast<std::size_t>(batch)};
}

std::vector<Index> chunk_rows(Index start, Index end) {
  std::vector<Index> rows;
  for (Index i = start; i < end; ++i) rows.push_back(i);
  return rows;
}

std::uint64_t head_seed(std::uint64_t seed) { return derive_seed({seed, hash_name("classifier-head")}); }

/// Logits of the classification head on unmasked images.
Tensor<float> classifier_logits(const ModelConfig& config, const Params<float>& params, const Dataset& data,
                                Index chunk) {
  Tensor<float> out({data.size(), config.num_classes});
  for (Index start = 0; start < data.size(); start += chunk) {
    const auto rows = chunk_rows(start, std::min(start + chunk, data.size()));
    Tape<float> tape;
    BoundParams<float> bound(tape, params, kNothingTrainable);
    auto enc = encoder_forward(bound, config, tape.constant(patchify(data.batch(rows), config.patch_size)), {});
    const auto logits = classifier_forward(bound, enc.final_tokens).value();
    out.matrix().middleRows(start, static_cast<Index>(rows.size())) = logits.matrix();
  }
  return out;
}

double mean_cross_entropy(const Tensor<float>& logits, std::span<const int> labels) {
  const auto m = logits.matrix().cast<double>();
  double total = 0.0;
  for (Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    total += lse - m(r, labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(m.rows());
}

Index checked_classes(const Dataset& train, const Dataset& eval) {
  if (!train.labeled() || !eval.labeled()) throw ConfigError("classification needs labeled train and eval data");
  const Index classes = train.num_classes();
  if (classes < 2) throw ConfigError("training labels cover fewer than 2 classes");
  if (eval.num_classes() > classes)
    throw ConfigError("eval label " + std::to_string(eval.num_classes() - 1) + " outside the " + std::to_string(classes) +
                      " training classes");
  return classes;
}

/// Trains an encoder + head on labels; the head must already be attached.
std::vector<StepRecord> train_classifier(Checkpoint& ck, const Dataset& data, const TrainConfig& config,
                                         const BoundParams<float>::Predicate& trainable,
                                         const std::function<void(const StepRecord&)>& on_step) {
  const auto sched = Schedule::make(config, data.size());
  AdamWOptions adam;
  adam.weight_decay = config.weight_decay;
  if (!ck.optimizer) ck.optimizer = AdamState{};
  std::vector<StepRecord> log;
  std::vector<Index> order;
  std::int64_t order_epoch = -1;
  for (std::int64_t s = ck.step + 1; s <= sched.total_steps; ++s) {
    const std::int64_t epoch = (s - 1) / sched.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(config.seed, epoch, data.size());
      order_epoch = epoch;
    }
    const auto rows = batch_rows(order, (s - 1) % sched.steps_per_epoch, config.batch_size);
    const auto labels = data.batch_labels(rows);
    StepRecord rec;
    rec.step = s;
    rec.lr = sched.lr(config, s);
    Tape<float> tape;
    BoundParams<float> bound(tape, ck.params, trainable);
    auto enc = encoder_forward(bound, ck.config, tape.constant(patchify(data.batch(rows), ck.config.patch_size)), {});
    auto loss = cross_entropy(classifier_forward(bound, enc.final_tokens), labels);
    tape.backward(loss);
    adamw_step(ck.params, bound.grads(), *ck.optimizer, rec.lr, adam);
    rec.total = loss.value().item();
    ck.step = s;
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

PretrainResult supervised_pretrain(const ModelConfig& model, const TrainConfig& train, const Dataset& data,
                                   const PretrainOptions& options) {
  if (!data.labeled()) throw ConfigError("supervised mode needs labeled data");
  PretrainResult res;
  Checkpoint& ck = res.checkpoint;
  if (options.resume) {
    ck = *options.resume;
  } else {
    ck.config = model;
    ck.config.num_classes = 0;
    ck.params = init_params<float>(ck.config, train.seed);
    attach_classifier(ck.params, ck.config, data.num_classes(), head_seed(train.seed));
    ck.rng_seed = train.seed;
  }
  const auto trainable = [](const std::string& name) { return !starts_with(name, "decoder."); };
  res.log = train_classifier(ck, data, train, trainable, options.on_step);
  if (options.validation) {
    const auto logits = classifier_logits(ck.config, ck.params, *options.validation, 32);
    const double v = mean_cross_entropy(logits, options.validation->labels);
    if (!res.log.empty()) res.log.back().val_loss = v;
    res.val_curve.emplace_back(train.epochs, v);
  }
  return res;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::deepmim: return "deepmim";
    case TrainMode::deepmim_hybrid: return "deepmim_hybrid";
    case TrainMode::baseline_mae: return "baseline_mae";
    case TrainMode::supervised: return "supervised";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  for (auto m : {TrainMode::deepmim, TrainMode::deepmim_hybrid, TrainMode::baseline_mae, TrainMode::supervised})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (warmup_epochs && !(*warmup_epochs >= 0.0 && *warmup_epochs < static_cast<double>(epochs)))
    throw ConfigError("warmup_epochs must lie in [0, epochs)");
  if (freeze_first_k && reinit_last_k) throw ConfigError("set at most one of freeze_first_k and reinit_last_k");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

Schedule Schedule::make(const TrainConfig& config, Index n_samples) {
  config.validate();
  if (n_samples < config.batch_size)
    throw ConfigError("dataset of " + std::to_string(n_samples) + " images is smaller than one batch of " +
                      std::to_string(config.batch_size));
  Schedule s;
  s.steps_per_epoch = n_samples / config.batch_size;
  s.total_steps = config.epochs * s.steps_per_epoch;
  if (config.max_steps > 0) s.total_steps = std::min(s.total_steps, config.max_steps);
  s.warmup_steps = config.warmup_epochs
                       ? std::llround(*config.warmup_epochs * static_cast<double>(s.steps_per_epoch))
                       : std::llround(0.05 * static_cast<double>(s.total_steps));
  s.warmup_steps = std::min(s.warmup_steps, s.total_steps - 1);
  return s;
}

double Schedule::lr(const TrainConfig& config, std::int64_t step) const {
  return cosine_lr(step - 1, total_steps, warmup_steps, config.peak_lr());
}

std::string step_log_header(std::span<const Index> decoder_ids) {
  std::string h = "step,lr,loss_total";
  for (Index id : decoder_ids) h += ",loss_dec_" + std::to_string(id);
  return h + ",val_loss";
}

std::string step_log_row(const StepRecord& r, std::span<const Index> decoder_ids) {
  std::string row = std::to_string(r.step) + "," + fmt(r.lr) + "," + fmt(r.total);
  for (Index id : decoder_ids) {
    auto it = r.decoder_loss.find(id);
    row += "," + (it == r.decoder_loss.end() ? std::string() : fmt(it->second));
  }
  return row + "," + (r.val_loss ? fmt(*r.val_loss) : std::string());
}

template <typename Scalar>
LossBreakdown<Scalar> total_loss(const std::map<Index, Var<Scalar>>& preds,
                                 const std::map<Index, Tensor<Scalar>>& targets, std::span<const MaskPlan> plans) {
  if (preds.empty()) throw ConfigError("total_loss: no decoders");
  if (preds.size() != targets.size()) throw ConfigError("total_loss: prediction and target decoders differ");
  LossBreakdown<Scalar> out;
  for (const auto& [id, pred] : preds) {
    auto it = targets.find(id);
    if (it == targets.end()) throw ConfigError("total_loss: no target for decoder " + std::to_string(id));
    auto loss = mse_masked(pred, it->second, plans);
    out.per_decoder.emplace(id, loss);
    out.total = out.total.valid() ? add(out.total, loss) : loss;
  }
  return out;
}

template <typename Scalar>
LossBreakdown<Scalar> pretrain_loss(const BoundParams<Scalar>& p, const ModelConfig& config,
                                    const Tensor<Scalar>& images, const std::map<Index, Tensor<Scalar>>& targets,
                                    std::span<const MaskPlan> plans) {
  auto enc = encoder_forward(p, config, p.tape().constant(patchify(images, config.patch_size)), plans);
  std::map<Index, Var<Scalar>> preds;
  for (Index id : config.decoder_ids()) {
    const auto& tokens = id == config.final_id() ? enc.final_tokens : enc.tap_tokens.at(id);
    preds.emplace(id, decoder_forward(p, config, id, tokens, plans));
  }
  return total_loss(preds, targets, plans);
}

std::vector<Index> epoch_order(std::uint64_t seed, std::int64_t epoch, Index n) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed({seed, hash_name("epoch-order"), static_cast<std::uint64_t>(epoch)}));
  for (Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
  return order;
}

ModelConfig effective_config(const ModelConfig& config, TrainMode mode) {
  ModelConfig c = config;
  if (mode == TrainMode::baseline_mae) c.tap_indices.clear();
  return c;
}

PretrainResult pretrain(const ModelConfig& model, const TrainConfig& train, const TargetSpecs& all_specs,
                        const Dataset& data, const PretrainOptions& options) {
  train.validate();
  data.validate();
  model.validate();
  check_geometry(model, data, "training");
  if (options.validation) check_geometry(model, *options.validation, "validation");
  if (train.mode == TrainMode::supervised) return supervised_pretrain(model, train, data, options);

  const ModelConfig config = effective_config(model, train.mode);
  const auto ids = config.decoder_ids();
  TargetSpecs specs;
  for (Index id : ids) {
    auto it = all_specs.find(id);
    if (it == all_specs.end()) throw ConfigError("no target spec for decoder " + std::to_string(id));
    it->second.validate();
    if (it->second.alpha < 1.0 && train.mode != TrainMode::deepmim_hybrid)
      throw ConfigError("decoder " + std::to_string(id) + " blends targets but mode is " + to_string(train.mode));
    specs.emplace(id, it->second);
  }
  if (train.mode == TrainMode::deepmim_hybrid) {
    if (!options.generator) throw ConfigError("hybrid mode needs a generator checkpoint");
    const auto& g = options.generator->config;
    if (g.image_size != config.image_size || g.patch_size != config.patch_size)
      throw DimensionError("generator geometry " + std::to_string(g.image_size) + "/" + std::to_string(g.patch_size) +
                           " differs from model " + std::to_string(config.image_size) + "/" +
                           std::to_string(config.patch_size));
  }

  const auto sched = Schedule::make(train, data.size());
  PretrainResult res;
  Checkpoint& ck = res.checkpoint;
  if (options.resume) {
    if (!(options.resume->config == config)) throw ConfigError("resume checkpoint was trained with another model config");
    if (options.resume->rng_seed != train.seed) throw ConfigError("resume checkpoint was trained with another seed");
    ck = *options.resume;
    if (!ck.optimizer) ck.optimizer = AdamState{};
  } else {
    ck.config = config;
    ck.params = init_params<float>(config, train.seed);
    ck.optimizer = AdamState{};
    ck.rng_seed = train.seed;
  }

  AdamWOptions adam;
  adam.weight_decay = train.weight_decay;
  const Index batch = train.batch_size;
  const std::int64_t end = options.halt_after > 0 ? std::min(options.halt_after, sched.total_steps) : sched.total_steps;
  std::vector<Index> order;
  std::int64_t order_epoch = -1;
  for (std::int64_t s = ck.step + 1; s <= end; ++s) {
    const std::int64_t epoch = (s - 1) / sched.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(train.seed, epoch, data.size());
      order_epoch = epoch;
    }
    const auto rows = batch_rows(order, (s - 1) % sched.steps_per_epoch, batch);
    const auto images = data.batch(rows);
    const auto sources = data.batch_sources(rows);
    const auto plans = sample_batch_masks(batch, config.n_patches(), config.mask_ratio, train.seed,
                                          1 + static_cast<std::uint64_t>(epoch), sources);
    StepRecord rec;
    rec.step = s;
    rec.lr = sched.lr(train, s);
    try {
      const auto target_set =
          build_targets(specs, config, images, plans, TargetSources{options.generator, options.features, sources});
      std::map<Index, Tensor<float>> targets;
      for (const auto& [id, t] : target_set.by_decoder) targets.emplace(id, *t);
      Tape<float> tape;
      BoundParams<float> bound(tape, ck.params);
      auto loss = pretrain_loss(bound, config, images, targets, plans);
      tape.backward(loss.total);
      adamw_step(ck.params, bound.grads(), *ck.optimizer, rec.lr, adam);
      for (const auto& [id, l] : loss.per_decoder) rec.decoder_loss[id] = l.value().item();
      rec.total = loss.total.value().item();
    } catch (const NumericError& e) {
      std::string where;
      if (!options.last_good_path.empty()) {
        ck.step = s - 1;
        save_checkpoint(ck, options.last_good_path);
        where = "; last good state (step " + std::to_string(s - 1) + ") saved to " + options.last_good_path;
      }
      throw TrainingAborted("training diverged at step " + std::to_string(s) + ": " + e.what() + where);
    }
    ck.step = s;
    if (options.validation && (s % sched.steps_per_epoch == 0 || s == sched.total_steps)) {
      const auto val_ids = options.validation->source_index;
      const double v = validation_loss(config, ck.params, specs.at(config.final_id()), *options.validation, train.seed,
                                       TargetSources{options.generator, options.features, val_ids});
      rec.val_loss = v;
      res.val_curve.emplace_back(static_cast<Index>((s - 1) / sched.steps_per_epoch + 1), v);
    }
    res.log.push_back(rec);
    if (options.on_step) options.on_step(rec);
  }
  return res;
}

double validation_loss(const ModelConfig& config, const Params<float>& params, const TargetSpec& final_spec,
                       const Dataset& data, std::uint64_t mask_seed, const TargetSources& sources, Index chunk) {
  check_geometry(config, data, "validation");
  TargetSpec spec = final_spec;
  if (spec.alpha != 1.0) throw ConfigError("the final decoder's target must be the raw input");
  const TargetSpecs only{{config.final_id(), spec}};
  ModelConfig final_only = config;
  final_only.tap_indices.clear();
  double total = 0.0;
  for (Index start = 0; start < data.size(); start += chunk) {
    const auto rows = chunk_rows(start, std::min(start + chunk, data.size()));
    const auto ids = data.batch_sources(rows);
    const auto images = data.batch(rows);
    const auto plans = sample_batch_masks(static_cast<Index>(rows.size()), config.n_patches(), config.mask_ratio,
                                          mask_seed, kValidationMaskStream, ids);
    std::span<const Index> feature_ids = ids;
    const auto targets = build_targets(only, final_only, images, plans, TargetSources{nullptr, sources.features, feature_ids});
    Tape<float> tape;
    BoundParams<float> bound(tape, params, kNothingTrainable);
    auto enc = encoder_forward(bound, config, tape.constant(patchify(images, config.patch_size)), plans);
    auto pred = decoder_forward(bound, config, config.final_id(), enc.final_tokens, plans);
    const double loss = mse_masked(pred, *targets.by_decoder.at(config.final_id()), plans).value().item();
    total += loss * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(data.size());
}

bool frozen_by_first_k(const std::string& name, Index k, Index depth) {
  if (k <= 0) return false;
  if (starts_with(name, "encoder.patch_embed.") || name == "encoder.pos") return true;
  if (starts_with(name, "encoder.norm.")) return k >= depth;
  for (Index b = 1; b <= std::min(k, depth); ++b)
    if (starts_with(name, encoder_block_prefix(b) + ".")) return true;
  return false;
}

Tensor<float> pooled_features(const ModelConfig& config, const Params<float>& params, const Dataset& data, Index block,
                              Index chunk) {
  if (block < 1 || block > config.depth)
    throw ConfigError("probe block " + std::to_string(block) + " outside [1, " + std::to_string(config.depth) + "]");
  check_geometry(config, data, "probe");
  Tensor<float> out({data.size(), config.embed_dim});
  EncoderOptions opt;
  opt.keep_blocks = true;
  opt.stop_after = block;
  for (Index start = 0; start < data.size(); start += chunk) {
    const auto rows = chunk_rows(start, std::min(start + chunk, data.size()));
    Tape<float> tape;
    BoundParams<float> bound(tape, params, kNothingTrainable);
    auto enc = encoder_forward(bound, config, tape.constant(patchify(data.batch(rows), config.patch_size)), {}, opt);
    const auto& tokens = block == config.depth ? enc.final_tokens : enc.block_outputs.back();
    out.matrix().middleRows(start, static_cast<Index>(rows.size())) = mean_tokens(tokens).value().matrix();
  }
  return out;
}

double accuracy(const Tensor<float>& logits, std::span<const int> labels) {
  const auto m = logits.matrix();
  if (m.rows() != static_cast<Index>(labels.size())) throw DimensionError("accuracy: one label per row required");
  Index hits = 0;
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    hits += best == labels[static_cast<std::size_t>(r)];
  }
  return static_cast<double>(hits) / static_cast<double>(m.rows());
}

ClassifierResult linear_probe(const Checkpoint& pretrained, Index tap, const Dataset& train, const Dataset& eval,
                              const TrainConfig& config) {
  config.validate();
  const Index classes = checked_classes(train, eval);
  const auto& model = pretrained.config;
  auto ftrain = pooled_features(model, pretrained.params, train, tap);
  auto feval = pooled_features(model, pretrained.params, eval, tap);

  // per-channel standardization with training statistics
  const Eigen::RowVectorXd mean = ftrain.matrix().cast<double>().colwise().mean();
  const Eigen::RowVectorXd stdev =
      ((ftrain.matrix().cast<double>().rowwise() - mean).array().square().colwise().mean() + 1e-6).sqrt();
  for (auto* f : {&ftrain, &feval})
    f->matrix() = ((f->matrix().cast<double>().rowwise() - mean).array().rowwise() / stdev.array()).cast<float>().matrix();

  ClassifierResult res;
  Checkpoint& ck = res.checkpoint;
  ck = pretrained;
  ck.optimizer.reset();
  ck.step = 0;
  ck.rng_seed = config.seed;
  attach_classifier(ck.params, ck.config, classes, head_seed(config.seed));
  Params<float> head{{"head.w", ck.params.at("head.w")}, {"head.b", ck.params.at("head.b")}};

  const auto sched = Schedule::make(config, train.size());
  AdamWOptions adam;
  adam.weight_decay = config.weight_decay;
  AdamState state;
  std::vector<Index> order;
  std::int64_t order_epoch = -1;
  Tensor<float> fb({config.batch_size, model.embed_dim});
  for (std::int64_t s = 1; s <= sched.total_steps; ++s) {
    const std::int64_t epoch = (s - 1) / sched.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(config.seed, epoch, train.size());
      order_epoch = epoch;
    }
    const auto rows = batch_rows(order, (s - 1) % sched.steps_per_epoch, config.batch_size);
    for (std::size_t i = 0; i < rows.size(); ++i) fb.matrix().row(static_cast<Index>(i)) = ftrain.matrix().row(rows[i]);
    const auto labels = train.batch_labels(rows);
    StepRecord rec;
    rec.step = s;
    rec.lr = sched.lr(config, s);
    Tape<float> tape;
    BoundParams<float> bound(tape, head);
    auto loss = cross_entropy(linear(tape.constant(fb), bound("head.w"), bound("head.b")), labels);
    tape.backward(loss);
    adamw_step(head, bound.grads(), state, rec.lr, adam);
    rec.total = loss.value().item();
    res.log.push_back(rec);
  }

  const auto& w = head.at("head.w").matrix();
  const auto& b = head.at("head.b").data();
  Tensor<float> logits({eval.size(), classes});
  logits.matrix() = (feval.matrix() * w).rowwise() + b.matrix().transpose();
  res.accuracy = accuracy(logits, eval.labels);

  // fold the standardization into the stored head so it reads raw pooled features
  const Eigen::MatrixXd wd = w.cast<double>();
  const Eigen::MatrixXd folded = stdev.transpose().cwiseInverse().asDiagonal() * wd;
  ck.params.at("head.w").matrix() = folded.cast<float>();
  ck.params.at("head.b").data() = (b.cast<double>() - (mean * folded).transpose().array()).cast<float>();
  ck.step = sched.total_steps;
  return res;
}

ClassifierResult finetune(const Checkpoint& pretrained, const Dataset& train, const Dataset& eval,
                          const TrainConfig& config) {
  config.validate();
  const Index classes = checked_classes(train, eval);
  const Index depth = pretrained.config.depth;
  check_geometry(pretrained.config, train, "fine-tuning");
  check_geometry(pretrained.config, eval, "evaluation");
  const Index k = config.freeze_first_k.value_or(0);
  if (k < 0 || k > depth) throw ConfigError("freeze_first_k " + std::to_string(k) + " outside [0, " + std::to_string(depth) + "]");
  // a fully frozen encoder is a linear probe on the final tokens
  if (k == depth) return linear_probe(pretrained, depth, train, eval, config);

  ClassifierResult res;
  Checkpoint& ck = res.checkpoint;
  ck = pretrained;
  ck.optimizer = AdamState{};
  ck.step = 0;
  ck.rng_seed = config.seed;
  if (config.reinit_last_k)
    ck.params = reinit_last_k(ck.params, ck.config, *config.reinit_last_k, derive_seed({config.seed, hash_name("reinit")}));
  attach_classifier(ck.params, ck.config, classes, head_seed(config.seed));
  const auto trainable = [k, depth](const std::string& name) {
    return !starts_with(name, "decoder.") && !frozen_by_first_k(name, k, depth);
  };
  res.log = train_classifier(ck, train, config, trainable, nullptr);
  res.accuracy = accuracy(classifier_logits(ck.config, ck.params, eval, 32), eval.labels);
  return res;
}

#define DEEPMIM_INSTANTIATE_TRAINING(S)                                                                           \
  template LossBreakdown<S> total_loss(const std::map<Index, Var<S>>&, const std::map<Index, Tensor<S>>&,         \
                                       std::span<const MaskPlan>);                                                \
  template LossBreakdown<S> pretrain_loss(const BoundParams<S>&, const ModelConfig&, const Tensor<S>&,            \
                                          const std::map<Index, Tensor<S>>&, std::span<const MaskPlan>);

DEEPMIM_INSTANTIATE_TRAINING(float)
DEEPMIM_INSTANTIATE_TRAINING(double)

}  // namespace deepmim
