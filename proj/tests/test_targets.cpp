// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <filesystem>

#include "deepmim/targets.hpp"
#include "test_helpers.hpp"

using namespace deepmim;
using deepmim::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 4;
  c.num_heads = 2;
  c.decoder_dim = 8;
  c.decoder_heads = 2;
  c.tap_indices = {1, 2, 3};
  return c;
}

std::vector<MaskPlan> plans_for(const ModelConfig& c, Index batch) {
  std::vector<Index> ids;
  for (Index i = 0; i < batch; ++i) ids.push_back(i);
  return sample_batch_masks(batch, c.n_patches(), c.mask_ratio, 17, 0, ids);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("deepmim_test_" + name)).string();
}

}  // namespace

TEST_CASE("pixel targets") {
  const auto flat = Tensor<float>::constant({1, 3, 8, 8}, 0.3f);
  CHECK(pixel_target(flat, 4, true).data().abs().maxCoeff() == 0.0f);

  const auto img = random_tensor<float>({2, 3, 8, 8}, 1, 0, 1);
  CHECK(pixel_target(img, 4, false).identical(patchify(img, 4)));

  const auto t = pixel_target(img, 4, true);
  for (Index r = 0; r < t.leading_rows(); ++r) {
    const auto row = t.matrix().row(r).array().cast<double>();
    const double mean = row.mean();
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(std::sqrt((row - mean).square().mean()) - 1.0) <= 1e-5);
  }
}

TEST_CASE("hog targets") {
  CHECK(hog_target(Tensor<float>::constant({1, 3, 8, 8}, 0.7f), 4).data().abs().maxCoeff() == 0.0f);
  CHECK(hog_target(Tensor<float>({1, 3, 8, 8}), 4).shape() == Shape{1, 4, kHogDim});

  // vertical step edge between columns 5 and 6 of a 16x16 image
  Tensor<float> step({1, 3, 16, 16});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 6; x < 16; ++x) step[(c * 16 + y) * 16 + x] = 1.0f;
  const auto h = hog_target(step, 4);
  // loop oracle: a pixel has non-zero (purely horizontal) gradient iff its
  // central-difference stencil straddles the edge, i.e. x in {5, 6}
  for (Index py = 0; py < 4; ++py)
    for (Index px = 0; px < 4; ++px)
      for (Index cy = 0; cy < 2; ++cy)
        for (Index cx = 0; cx < 2; ++cx) {
          const Index x0 = px * 4 + cx * 2;
          const bool crosses = (x0 <= 5 && 5 < x0 + 2) || (x0 <= 6 && 6 < x0 + 2);
          const auto cell = h.matrix().row(py * 4 + px).segment((cy * 2 + cx) * kHogBins, kHogBins);
          if (crosses) {
            CHECK(cell(0) == doctest::Approx(1.0).epsilon(1e-5));
            CHECK(cell.tail(kHogBins - 1).cwiseAbs().maxCoeff() == 0.0f);
          } else {
            CHECK(cell.cwiseAbs().maxCoeff() == 0.0f);
          }
        }
}

TEST_CASE("hog targets follow a whole-patch translation") {
  Tensor<float> img({1, 3, 16, 16});
  Tensor<float> shifted({1, 3, 16, 16});
  Rng rng(3);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 4; y < 8; ++y)
      for (Index x = 4; x < 8; ++x) {
        const auto v = static_cast<float>(rng.uniform());
        img[(c * 16 + y) * 16 + x] = v;
        shifted[(c * 16 + y) * 16 + x + 4] = v;
      }
  const auto a = hog_target(img, 4);
  const auto b = hog_target(shifted, 4);
  for (Index py = 0; py < 4; ++py)
    for (Index px = 0; px < 3; ++px) CHECK(a.matrix().row(py * 4 + px) == b.matrix().row(py * 4 + px + 1));
}

TEST_CASE("feature files") {
  const auto path = temp_path("features.dmft");
  std::vector<Tensor<float>> records{random_tensor<float>({16, 5}, 1), random_tensor<float>({16, 5}, 2),
                                     random_tensor<float>({16, 5}, 3)};
  FeatureFile::write(path, records);
  FeatureFile file(path);
  CHECK(file.n_samples() == 3);
  CHECK(file.n_patches() == 16);
  CHECK(file.feat_dim() == 5);
  for (Index i = 0; i < 3; ++i) CHECK(file.read(i).identical(records[static_cast<std::size_t>(i)]));

  try {
    file.read(3);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("index 3") != std::string::npos);
  }
  const std::vector<Index> ids{2, 0};
  const auto batch = feature_file_target(file, ids, 16);
  CHECK(batch.shape() == Shape{2, 16, 5});
  CHECK(batch.matrix().topRows(16) == records[2].matrix());
  CHECK_THROWS_AS(feature_file_target(file, ids, 64), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("blend") {
  const auto x = random_tensor<float>({1, 3, 8, 8}, 4, 0, 1);
  const auto xh = random_tensor<float>({1, 3, 8, 8}, 5, 0, 1);
  CHECK(blend(x, xh, 1.0).identical(x));
  CHECK(blend(x, xh, 0.0).identical(xh));
  const auto half = blend(Tensor<float>::constant({2, 2}, 0.2f), Tensor<float>::constant({2, 2}, 0.8f), 0.5);
  for (Index i = 0; i < 4; ++i) CHECK(half[i] == doctest::Approx(0.5f).epsilon(1e-7));
  CHECK_THROWS_AS(blend(x, xh, 1.5), ConfigError);
  CHECK_THROWS_AS(blend(x, xh, -0.1), ConfigError);

  const Eigen::ArrayXf d = blend(x, xh, 1.0 / 3.0).data() - blend(x, xh, 0.0).data();
  CHECK(((d - (x.data() - xh.data()) / 3.0f).abs() <= 1e-6f).all());

  // monotone in alpha between x_hat and x
  Tensor<float> prev = xh;
  for (int k = 1; k <= 10; ++k) {
    const auto t = blend(x, xh, k / 10.0);
    for (Index i = 0; i < t.size(); ++i) {
      if (x[i] >= xh[i]) CHECK(t[i] >= prev[i]);
      else CHECK(t[i] <= prev[i]);
    }
    prev = t;
  }
}

TEST_CASE("alpha schedules") {
  const auto c = small_config();
  const auto plain = default_target_specs(c, TargetKind::pixel, false);
  for (const auto& [id, s] : plain) CHECK(s.alpha == 1.0);
  const auto hybrid = default_target_specs(c, TargetKind::pixel, true, "gen.ckpt");
  CHECK(hybrid.at(1).alpha == 0.0);
  CHECK(hybrid.at(2).alpha == 1.0 / 3.0);
  CHECK(hybrid.at(3).alpha == 2.0 / 3.0);
  CHECK(hybrid.at(4).alpha == 1.0);
  CHECK(parse_alpha_schedule("0,1/3,2/3,1") == std::vector<double>{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0});
  CHECK_THROWS_AS(parse_alpha_schedule("0,abc"), ConfigError);
  CHECK_THROWS_AS(parse_alpha_schedule("2"), ConfigError);

  TargetSpec s;
  s.alpha = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.generator_checkpoint = "g";
  CHECK_NOTHROW(s.validate());
  s.kind = TargetKind::feature_file;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("hybrid reconstruction") {
  const auto c = small_config();
  HybridGenerator gen{c, init_params<float>(c, 21)};
  const auto images = random_tensor<float>({2, 3, 16, 16}, 6, 0, 1);
  // all but one patch masked
  std::vector<Index> masked;
  for (Index i = 1; i < 16; ++i) masked.push_back(i);
  const std::vector<MaskPlan> plans{MaskPlan::from_masked(16, masked, 15.0 / 16), MaskPlan::from_masked(16, masked, 15.0 / 16)};
  const auto xh = generate_reconstruction(gen, images, plans);
  CHECK(xh.shape() == images.shape());
  const auto px = patchify(images, 4);
  const auto ph = patchify(xh, 4);
  for (Index b = 0; b < 2; ++b) CHECK(ph.matrix().row(b * 16) == px.matrix().row(b * 16));

  // zeroed unembedding -> masked patches are the original patch means
  gen.params.at("decoder.final.head.w").data().setZero();
  gen.params.at("decoder.final.head.b").data().setZero();
  const auto flat = patchify(generate_reconstruction(gen, images, plans), 4);
  for (Index r = 1; r < 16; ++r) {
    const float mean = px.matrix().row(r).mean();
    CHECK((flat.matrix().row(r).array() - mean).abs().maxCoeff() <= 1e-6f);
  }

  const auto wrong = random_tensor<float>({2, 3, 32, 32}, 7);
  CHECK_THROWS_AS(generate_reconstruction(gen, wrong, plans), DimensionError);
}

TEST_CASE("build_targets") {
  const auto c = small_config();
  const auto images = random_tensor<float>({2, 3, 16, 16}, 8, 0, 1);
  const auto plans = plans_for(c, 2);

  const auto plain = build_targets(default_target_specs(c, TargetKind::pixel, false), c, images, plans);
  CHECK(plain.reconstruction == nullptr);
  for (const auto& [id, t] : plain.by_decoder) CHECK(t.get() == plain.by_decoder.at(4).get());

  HybridGenerator gen{c, init_params<float>(c, 22)};
  auto specs = default_target_specs(c, TargetKind::pixel, true, "gen.ckpt");
  for (auto& [id, s] : specs) s.normalize_per_patch = false;
  TargetSources src;
  src.generator = &gen;
  const auto hybrid = build_targets(specs, c, images, plans, src);
  REQUIRE(hybrid.reconstruction != nullptr);
  CHECK(hybrid.by_decoder.at(4)->identical(pixel_target(images, 4, false)));
  CHECK(hybrid.by_decoder.at(1)->identical(pixel_target(*hybrid.reconstruction, 4, false)));
  const Eigen::ArrayXf diff = hybrid.by_decoder.at(2)->data() - hybrid.by_decoder.at(1)->data();
  const Eigen::ArrayXf expect = (patchify(images, 4).data() - patchify(*hybrid.reconstruction, 4).data()) / 3.0f;
  CHECK(((diff - expect).abs() <= 1e-6f).all());

  CHECK_THROWS_AS(build_targets(specs, c, images, plans), ConfigError);  // no generator

  auto feat = default_target_specs(c, TargetKind::feature_file, false);
  feat.at(1).alpha = 0.5;
  feat.at(1).generator_checkpoint = "gen.ckpt";
  CHECK_THROWS_AS(build_targets(feat, c, images, plans, src), ConfigError);

  auto hog_cfg = c;
  hog_cfg.target_dim = kHogDim;
  const auto hog = build_targets(default_target_specs(hog_cfg, TargetKind::hog, false), hog_cfg, images, plans);
  CHECK(hog.by_decoder.at(4)->shape() == Shape{2, 16, kHogDim});
  CHECK_THROWS_AS(build_targets(default_target_specs(c, TargetKind::hog, false), c, images, plans), ConfigError);
}
