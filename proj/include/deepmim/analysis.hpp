// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deepmim/checkpoint.hpp"
#include "deepmim/data.hpp"
#include "deepmim/errors.hpp"
#include "deepmim/targets.hpp"

namespace deepmim {

inline constexpr Index kMinProbeImages = 128;

/// Linear CKA of two representations of the same n samples (rows):
/// ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) with column-centered Xc, Yc.
template <typename DerivedX, typename DerivedY>
double linear_cka(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  if (x.rows() != y.rows())
    throw DimensionError("linear_cka: " + std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + " samples");
  if (x.rows() < 2) throw DimensionError("linear_cka needs at least 2 samples");
  const Eigen::MatrixXd xc = x.template cast<double>().rowwise() - x.template cast<double>().colwise().mean();
  const Eigen::MatrixXd yc = y.template cast<double>().rowwise() - y.template cast<double>().colwise().mean();
  if (!xc.allFinite() || !yc.allFinite()) throw NumericError("linear_cka: non-finite features");
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0) throw NumericError("linear_cka: zero-variance features");
  return (yc.transpose() * xc).squaredNorm() / (xx * yy);
}

/// Token-averaged raw output of every encoder block on unmasked images,
/// [n, embed_dim] per block, block 1 first.
std::vector<Eigen::MatrixXd> block_features(const ModelConfig& config, const Params<float>& params, const Dataset& probe,
                                            Index chunk = 32);

/// CKA of every block against the last one; the last entry is exactly 1.
std::vector<double> cka_profile(const Checkpoint& ckpt, const Dataset& probe);

/// CKA of block layer_a of model A against every block of model B.
std::vector<double> cross_cka(const Checkpoint& a, const Checkpoint& b, Index layer_a, const Dataset& probe);

struct HeadSimilarity {
  /// Pairwise cosines of probe-averaged attention maps, heads x heads.
  Eigen::MatrixXd cosine;
  /// Mean over pairs i < j.
  double mean = 0.0;
};

/// Per block: each head's attention map [T, T] averaged over the probe images,
/// flattened, compared by cosine similarity.
std::vector<HeadSimilarity> head_similarity(const Checkpoint& ckpt, const Dataset& probe, Index chunk = 32);

/// Final-decoder masked reconstruction loss with masks fixed by mask_seed.
double val_recon_loss(const Checkpoint& ckpt, const Dataset& data, std::uint64_t mask_seed,
                      TargetKind kind = TargetKind::pixel);

struct AnalysisReport {
  std::vector<double> cka_profile;
  Index cross_layer_a = 0;
  std::vector<double> cross_cka;
  std::vector<HeadSimilarity> head_similarity;
  std::vector<std::pair<Index, double>> val_loss;

  /// cka_profile.csv, cross_cka.csv, head_sim.csv and val_loss.csv for the
  /// non-empty tables.
  void write(const std::string& dir) const;
};

}  // namespace deepmim
