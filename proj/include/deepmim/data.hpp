// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepmim/tensor.hpp"

namespace deepmim {

/// Binary PPM (P6, maxval 255) as a [3, H, W] tensor with values k / 255.
Tensor<float> read_ppm(const std::string& path);

/// Inverse of read_ppm after clamping to [0, 1]; bytes are floor(255 v + 0.5).
void write_ppm(const std::string& path, const Tensor<float>& image);

/// Images held in memory as one [n, 3, S, S] tensor.
struct Dataset {
  Tensor<float> images;
  /// Empty for unlabeled data, otherwise one class per image.
  std::vector<int> labels;
  std::vector<std::string> names;
  /// Index of each image in the dataset it was loaded from; feature files are
  /// addressed with these.
  std::vector<Index> source_index;

  Index size() const { return images.defined() ? images.dim(0) : 0; }
  Index image_size() const { return images.dim(2); }
  bool labeled() const { return !labels.empty(); }
  /// 1 + the largest label.
  Index num_classes() const;

  Tensor<float> batch(std::span<const Index> rows) const;
  std::vector<int> batch_labels(std::span<const Index> rows) const;
  std::vector<Index> batch_sources(std::span<const Index> rows) const;
  Dataset subset(std::span<const Index> rows) const;

  /// Checks geometry and label coverage.
  void validate() const;
};

/// Builds a dataset from [3, S, S] images; names default to 00000.ppm, ...
Dataset make_dataset(std::span<const Tensor<float>> images, std::vector<int> labels = {});

/// Leading (1 - fraction) of the images for training, the rest held out.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double holdout_fraction);

/// Directory of PPM files; a labels.tsv (filename<TAB>class) fixes the order
/// and must list every PPM, otherwise files are read in name order unlabeled.
Dataset load_image_dir(const std::string& dir);

/// Writes every image as a PPM plus labels.tsv when labeled.
void save_image_dir(const Dataset& data, const std::string& dir);

struct SyntheticSpec {
  Index n_samples = 512;
  Index image_size = 32;
  Index n_classes = 4;
  std::uint64_t seed = 0;
};

/// Class-dependent textures: an oriented grating whose angle and tint encode
/// the class, overlaid with a class-colored shape at a jittered position.
/// Pixels are quantized to k / 255 so a PPM round trip is exact.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace deepmim
