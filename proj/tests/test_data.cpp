// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "deepmim/data.hpp"
#include "deepmim/errors.hpp"
#include "test_helpers.hpp"

using namespace deepmim;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("deepmim_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("ppm decoding of a known 2x2 file") {
  const auto dir = fresh_dir("ppm_known");
  std::string bytes = "P6\n# comment\n2 2\n255\n";
  const unsigned char px[12] = {0, 255, 51, 102, 153, 204, 1, 2, 3, 250, 128, 127};
  bytes.append(reinterpret_cast<const char*>(px), 12);
  write_bytes(dir / "a.ppm", bytes);
  const auto img = read_ppm((dir / "a.ppm").string());
  REQUIRE(img.shape() == Shape{3, 2, 2});
  // pixel (y, x) holds px[(y * 2 + x) * 3 + c]
  for (Index y = 0; y < 2; ++y)
    for (Index x = 0; x < 2; ++x)
      for (Index c = 0; c < 3; ++c)
        CHECK(img[(c * 2 + y) * 2 + x] == static_cast<float>(px[(y * 2 + x) * 3 + c]) / 255.0f);
  CHECK(img[0] == 0.0f);
  CHECK(img[4] == 1.0f);
}

TEST_CASE("ppm round trip and header errors") {
  const auto dir = fresh_dir("ppm_rt");
  Tensor<float> img({3, 5, 7});
  Rng rng(4);
  for (Index i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.below(256)) / 255.0f;
  write_ppm((dir / "r.ppm").string(), img);
  CHECK(read_ppm((dir / "r.ppm").string()).identical(img));

  // clamping and round-half-up
  Tensor<float> edge({3, 1, 2}, {-0.5f, 2.0f, 0.5f, 0.25f, 0.2f, 0.8f});
  write_ppm((dir / "e.ppm").string(), edge);
  const auto back = read_ppm((dir / "e.ppm").string());
  CHECK(back[0] == 0.0f);
  CHECK(back[1] == 1.0f);
  CHECK(back[2] == 128.0f / 255.0f);  // 127.5 rounds up
  CHECK(back[3] == 64.0f / 255.0f);   // 63.75

  write_bytes(dir / "deep.ppm", "P6\n2 2\n65535\n" + std::string(24, '\0'));
  try {
    read_ppm((dir / "deep.ppm").string());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("maxval 65535") != std::string::npos);
  }
  write_bytes(dir / "bad.ppm", "P6\n2 x\n255\n");
  try {
    read_ppm((dir / "bad.ppm").string());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("at byte 5") != std::string::npos);
  }
  write_bytes(dir / "p3.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm((dir / "p3.ppm").string()), IoError);
  write_bytes(dir / "short.ppm", "P6\n2 2\n255\n" + std::string(5, '\0'));
  CHECK_THROWS_AS(read_ppm((dir / "short.ppm").string()), IoError);
}

TEST_CASE("synthetic data is deterministic and survives a directory round trip") {
  const SyntheticSpec spec{40, 16, 4, 9};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.images.identical(b.images));
  CHECK(a.labels == b.labels);
  CHECK(a.images.shape() == Shape{40, 3, 16, 16});
  CHECK(a.num_classes() == 4);
  CHECK_FALSE(a.images.identical(generate_synthetic({40, 16, 4, 10}).images));

  const auto d1 = fresh_dir("gen_a");
  const auto d2 = fresh_dir("gen_b");
  save_image_dir(a, d1.string());
  save_image_dir(b, d2.string());
  for (const auto& e : fs::directory_iterator(d1))
    CHECK(read_bytes(e.path()) == read_bytes(d2 / e.path().filename()));
  const auto loaded = load_image_dir(d1.string());
  CHECK(loaded.images.identical(a.images));
  CHECK(loaded.labels == a.labels);
  CHECK(loaded.names == a.names);

  std::ofstream(d1 / "labels.tsv", std::ios::trunc) << "00000.ppm\t1\n";
  CHECK_THROWS_AS(load_image_dir(d1.string()), IoError);
  CHECK_THROWS_AS(generate_synthetic({10, 16, 1, 0}), ConfigError);
}

TEST_CASE("synthetic classes are separable by a pixel-space linear classifier") {
  const auto data = generate_synthetic({512, 16, 4, 11});
  const auto [train, test] = split_dataset(data, 0.25);
  CHECK(train.size() == 384);
  CHECK(test.size() == 128);
  // ridge regression onto one-hot labels, closed form
  const Index d = train.images.size() / train.size();
  auto features = [&](const Dataset& ds) {
    Eigen::MatrixXd x(ds.size(), d + 1);
    x.leftCols(d) = Eigen::Map<const RowMatrix<float>>(ds.images.ptr(), ds.size(), d).cast<double>();
    x.col(d).setOnes();
    return x;
  };
  const auto xtr = features(train);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(train.size(), 4);
  for (Index i = 0; i < train.size(); ++i) y(i, train.labels[static_cast<std::size_t>(i)]) = 1.0;
  const Eigen::MatrixXd gram = xtr.transpose() * xtr + 1.0 * Eigen::MatrixXd::Identity(d + 1, d + 1);
  const Eigen::MatrixXd w = gram.ldlt().solve(xtr.transpose() * y);
  const Eigen::MatrixXd scores = features(test) * w;
  Index hits = 0;
  for (Index i = 0; i < test.size(); ++i) {
    Index best;
    scores.row(i).maxCoeff(&best);
    hits += best == test.labels[static_cast<std::size_t>(i)];
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(test.size());
  MESSAGE("pixel-space ridge accuracy " << acc);
  CHECK(acc > 0.25 + 0.1);
}

TEST_CASE("dataset subsets keep their source indices") {
  const auto data = generate_synthetic({10, 8, 2, 1});
  const std::vector<Index> rows{7, 2};
  const auto sub = data.subset(rows);
  CHECK(sub.source_index == std::vector<Index>{7, 2});
  CHECK(sub.labels == std::vector<int>{data.labels[7], data.labels[2]});
  CHECK(sub.batch(std::vector<Index>{0}).data().isApprox(data.batch(std::vector<Index>{7}).data()));
  CHECK_THROWS_AS(split_dataset(data, 0.0), ConfigError);
  CHECK_THROWS_AS(data.batch(std::vector<Index>{10}), DimensionError);
}
