// SPDX-License-Identifier: Apache-2.0
#include "deepmim/checkpoint.hpp"

#include <cstring>
#include <filesystem>

#include "deepmim/binary_io.hpp"

namespace deepmim {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'I', 'M'};

void put_index(BinaryWriter& w, Index v) {
  if (v < 0 || v > 0xffffffffL) throw ConfigError("value " + std::to_string(v) + " does not fit a u32 field");
  w.put(static_cast<std::uint32_t>(v));
}

Index get_index(BinaryReader& r) { return static_cast<Index>(r.get<std::uint32_t>()); }

void write_config(BinaryWriter& w, const ModelConfig& c) {
  put_index(w, c.image_size);
  put_index(w, c.patch_size);
  put_index(w, c.embed_dim);
  put_index(w, c.depth);
  put_index(w, c.num_heads);
  w.put(c.mlp_ratio);
  put_index(w, c.decoder_dim);
  put_index(w, c.decoder_depth);
  put_index(w, c.decoder_heads);
  put_index(w, static_cast<Index>(c.tap_indices.size()));
  for (Index t : c.tap_indices) put_index(w, t);
  w.put(c.mask_ratio);
  w.put(static_cast<std::uint8_t>(c.shared_decoder));
  put_index(w, c.target_dim);
  w.put(static_cast<std::uint8_t>(c.norm_pix_target));
  put_index(w, c.num_classes);
}

ModelConfig read_config(BinaryReader& r) {
  ModelConfig c;
  c.image_size = get_index(r);
  c.patch_size = get_index(r);
  c.embed_dim = get_index(r);
  c.depth = get_index(r);
  c.num_heads = get_index(r);
  c.mlp_ratio = r.get<double>();
  c.decoder_dim = get_index(r);
  c.decoder_depth = get_index(r);
  c.decoder_heads = get_index(r);
  const Index taps = get_index(r);
  if (taps > 4096) throw IoError(r.path() + ": implausible tap count " + std::to_string(taps));
  for (Index i = 0; i < taps; ++i) c.tap_indices.push_back(get_index(r));
  c.mask_ratio = r.get<double>();
  c.shared_decoder = r.get<std::uint8_t>() != 0;
  c.target_dim = get_index(r);
  c.norm_pix_target = r.get<std::uint8_t>() != 0;
  c.num_classes = get_index(r);
  return c;
}

void write_table(BinaryWriter& w, const Params<float>& table) {
  put_index(w, static_cast<Index>(table.size()));
  for (const auto& [name, t] : table) {
    put_index(w, static_cast<Index>(name.size()));
    w.bytes(name.data(), name.size());
    if (t.rank() > 255) throw ConfigError("tensor rank too large for checkpoint: " + name);
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) put_index(w, d);
    w.floats(t.ptr(), static_cast<std::size_t>(t.size()));
  }
}

Params<float> read_table(BinaryReader& r) {
  Params<float> table;
  const Index count = get_index(r);
  for (Index i = 0; i < count; ++i) {
    const auto at = r.offset();
    const Index len = get_index(r);
    if (len > 4096) throw IoError(r.path() + ": implausible name length at byte " + std::to_string(at));
    std::string name(static_cast<std::size_t>(len), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(get_index(r));
    if (shape_size(shape) > (Index{1} << 31)) throw IoError(r.path() + ": implausible tensor size for " + name);
    Tensor<float> t(shape);
    r.floats(t.ptr(), static_cast<std::size_t>(t.size()));
    if (!table.emplace(name, std::move(t)).second) throw IoError(r.path() + ": duplicate parameter " + name);
  }
  return table;
}

}  // namespace

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.config == b.config) || a.rng_seed != b.rng_seed || a.step != b.step) return false;
  if (a.optimizer.has_value() != b.optimizer.has_value()) return false;
  if (a.optimizer && !(*a.optimizer == *b.optimizer)) return false;
  AdamState pa{a.params, {}, 0}, pb{b.params, {}, 0};
  return pa == pb;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  // write beside the target and rename, so a crash never leaves a torn file
  const std::string tmp = path + ".tmp";
  {
    BinaryWriter w(tmp);
    w.bytes(kMagic, 4);
    w.put(kCheckpointVersion);
    write_config(w, ckpt.config);
    write_table(w, ckpt.params);
    w.put(static_cast<std::uint8_t>(ckpt.optimizer.has_value()));
    if (ckpt.optimizer) {
      w.put(static_cast<std::uint64_t>(ckpt.optimizer->t));
      write_table(w, ckpt.optimizer->m);
      write_table(w, ckpt.optimizer->v);
    }
    w.put(ckpt.rng_seed);
    w.put(static_cast<std::uint64_t>(ckpt.step));
    w.close();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError(path + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError(path + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  c.config = read_config(r);
  c.params = read_table(r);
  if (r.get<std::uint8_t>() != 0) {
    AdamState s;
    s.t = static_cast<std::int64_t>(r.get<std::uint64_t>());
    s.m = read_table(r);
    s.v = read_table(r);
    c.optimizer = std::move(s);
  }
  c.rng_seed = r.get<std::uint64_t>();
  c.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
  if (!r.at_end()) throw IoError(path + ": trailing bytes after checkpoint at byte " + std::to_string(r.offset()));
  c.config.validate();
  const auto shapes = param_shapes(c.config);
  for (const auto& [name, shape] : shapes) {
    auto it = c.params.find(name);
    if (it == c.params.end()) throw IoError(path + ": missing parameter " + name);
    if (it->second.shape() != shape)
      throw IoError(path + ": parameter " + name + " has shape " + shape_str(it->second.shape()) + ", config implies " +
                    shape_str(shape));
  }
  if (c.params.size() != shapes.size()) throw IoError(path + ": checkpoint holds parameters its config does not define");
  return c;
}

}  // namespace deepmim
