// SPDX-License-Identifier: Apache-2.0
#include "deepmim/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "deepmim/errors.hpp"
#include "deepmim/rng.hpp"

namespace deepmim {

namespace fs = std::filesystem;

namespace {

class HeaderParser {
 public:
  HeaderParser(const std::string& path, const std::vector<unsigned char>& bytes) : path_(path), bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path_ + ": malformed PPM header at byte " + std::to_string(pos_) + ": " + what);
  }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected a decimal number");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) fail("number too large");
      ++pos_;
    }
    return v;
  }

  void magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '6') fail("expected magic P6");
    pos_ = 2;
  }

  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("expected whitespace before pixel data");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& path_;
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string default_name(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05ld.ppm", static_cast<long>(i));
  return buf;
}

}  // namespace

Tensor<float> read_ppm(const std::string& path) {
  const auto bytes = read_file(path);
  HeaderParser parser(path, bytes);
  parser.magic();
  const long w = parser.number();
  const long h = parser.number();
  const long maxval = parser.number();
  if (w <= 0 || h <= 0) parser.fail("zero image size");
  if (maxval != 255) throw IoError(path + ": unsupported PPM maxval " + std::to_string(maxval) + " (only 255)");
  parser.single_space();
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - parser.pos() < need)
    throw IoError(path + ": pixel data truncated at byte " + std::to_string(bytes.size()));
  Tensor<float> img({3, h, w});
  const unsigned char* px = bytes.data() + parser.pos();
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long c = 0; c < 3; ++c) img[(c * h + y) * w + x] = static_cast<float>(px[(y * w + x) * 3 + c]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm expects [3, H, W], got " + shape_str(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> px(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(c * h + y) * w + x], 0.0f, 1.0f);
        px[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
      }
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write to " + path + " failed");
}

Index Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

Tensor<float> Dataset::batch(std::span<const Index> rows) const {
  const Index per = images.size() / size();
  Shape shape = images.shape();
  shape[0] = static_cast<Index>(rows.size());
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= size()) throw DimensionError("dataset row " + std::to_string(rows[i]) + " out of range");
    out.data().segment(static_cast<Index>(i) * per, per) = images.data().segment(rows[i] * per, per);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const Index> rows) const {
  if (!labeled()) throw ConfigError("dataset has no labels");
  std::vector<int> out;
  for (Index r : rows) out.push_back(labels.at(static_cast<std::size_t>(r)));
  return out;
}

std::vector<Index> Dataset::batch_sources(std::span<const Index> rows) const {
  std::vector<Index> out;
  for (Index r : rows) out.push_back(source_index.at(static_cast<std::size_t>(r)));
  return out;
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  out.images = batch(rows);
  for (Index r : rows) {
    const auto i = static_cast<std::size_t>(r);
    if (labeled()) out.labels.push_back(labels[i]);
    out.names.push_back(names[i]);
    out.source_index.push_back(source_index[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (size() == 0) throw ConfigError("dataset is empty");
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3))
    throw DimensionError("dataset images must be [n, 3, S, S], got " + shape_str(images.shape()));
  const auto n = static_cast<std::size_t>(size());
  if (labeled() && labels.size() != n) throw ConfigError("labels do not cover every image");
  if (names.size() != n || source_index.size() != n) throw ConfigError("dataset metadata does not cover every image");
  for (int l : labels)
    if (l < 0) throw ConfigError("negative class label " + std::to_string(l));
}

Dataset make_dataset(std::span<const Tensor<float>> images, std::vector<int> labels) {
  if (images.empty()) throw ConfigError("dataset is empty");
  const Shape shape = images.front().shape();
  Dataset d;
  d.images = Tensor<float>({static_cast<Index>(images.size()), shape.at(0), shape.at(1), shape.at(2)});
  const Index per = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape)
      throw DimensionError("image " + std::to_string(i) + " has shape " + shape_str(images[i].shape()) + ", expected " +
                           shape_str(shape));
    d.images.data().segment(static_cast<Index>(i) * per, per) = images[i].data();
    d.names.push_back(default_name(static_cast<Index>(i)));
    d.source_index.push_back(static_cast<Index>(i));
  }
  d.labels = std::move(labels);
  d.validate();
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double holdout_fraction) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  const Index n = data.size();
  const auto held = static_cast<Index>(std::llround(holdout_fraction * static_cast<double>(n)));
  if (held < 1 || held >= n) throw ConfigError("dataset of " + std::to_string(n) + " images too small to split");
  std::vector<Index> train, test;
  for (Index i = 0; i < n; ++i) (i < n - held ? train : test).push_back(i);
  return {data.subset(train), data.subset(test)};
}

Dataset load_image_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir + " does not exist");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());

  std::vector<std::string> order;
  std::vector<int> labels;
  const auto label_path = fs::path(dir) / "labels.tsv";
  if (fs::exists(label_path)) {
    std::ifstream in(label_path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw IoError(label_path.string() + ":" + std::to_string(lineno) + ": expected filename<TAB>class");
      order.push_back(line.substr(0, tab));
      try {
        std::size_t used = 0;
        labels.push_back(std::stoi(line.substr(tab + 1), &used));
        if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw IoError(label_path.string() + ":" + std::to_string(lineno) + ": bad class label");
      }
    }
    std::vector<std::string> listed = order;
    std::sort(listed.begin(), listed.end());
    for (const auto& f : files)
      if (!std::binary_search(listed.begin(), listed.end(), f)) throw IoError("image " + f + " has no entry in labels.tsv");
  } else {
    order = files;
  }
  if (order.empty()) throw IoError("no PPM images in " + dir);

  std::vector<Tensor<float>> images;
  for (const auto& f : order) images.push_back(read_ppm((fs::path(dir) / f).string()));
  auto d = make_dataset(images, labels);
  d.names = order;
  return d;
}

void save_image_dir(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const Index per = data.images.size() / data.size();
  const Shape shape{3, data.image_size(), data.image_size()};
  for (Index i = 0; i < data.size(); ++i) {
    Tensor<float> img(shape, data.images.data().segment(i * per, per));
    write_ppm((fs::path(dir) / data.names[static_cast<std::size_t>(i)]).string(), img);
  }
  if (data.labeled()) {
    std::ofstream out(fs::path(dir) / "labels.tsv");
    for (Index i = 0; i < data.size(); ++i)
      out << data.names[static_cast<std::size_t>(i)] << '\t' << data.labels[static_cast<std::size_t>(i)] << '\n';
    if (!out) throw IoError("cannot write labels.tsv in " + dir);
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.n_samples < 1 || spec.image_size < 4) throw ConfigError("synthetic spec too small");
  const Index s = spec.image_size;
  const double k = static_cast<double>(spec.n_classes);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (Index i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed({spec.seed, 0x5e17u, static_cast<std::uint64_t>(i)}));
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_classes)));
    const double c = static_cast<double>(label);
    const double theta = std::numbers::pi * (c + rng.uniform(-0.15, 0.15)) / k;
    const double freq = rng.uniform(2.0, 3.0) / static_cast<double>(s);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double hue = 2.0 * std::numbers::pi * c / k;
    double tint[3], shape_color[3];
    for (int ch = 0; ch < 3; ++ch) {
      tint[ch] = 0.5 + 0.35 * std::cos(hue + 2.0 * std::numbers::pi * ch / 3.0);
      shape_color[ch] = 0.5 + 0.45 * std::cos(hue + std::numbers::pi + 2.0 * std::numbers::pi * ch / 3.0);
    }
    const double radius = s * rng.uniform(0.15, 0.25);
    const double cx = rng.uniform(radius, s - radius), cy = rng.uniform(radius, s - radius);
    const bool square = label % 2 == 1;

    Tensor<float> img({3, s, s});
    for (Index y = 0; y < s; ++y)
      for (Index x = 0; x < s; ++x) {
        const double u = x * std::cos(theta) + y * std::sin(theta);
        const double wave = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * u + phase);
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const bool inside = square ? std::max(std::abs(dx), std::abs(dy)) <= radius * 0.85
                                   : dx * dx + dy * dy <= radius * radius;
        for (int ch = 0; ch < 3; ++ch) {
          const double shade = 0.5 + 0.25 * (dx + dy) / radius;
          double v = inside ? shape_color[ch] * (0.4 + 0.6 * shade) : tint[ch] * (0.3 + 0.7 * wave);
          v += 0.01 * rng.normal();
          img[(ch * s + y) * s + x] = static_cast<float>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)) / 255.0f;
        }
      }
    images.push_back(std::move(img));
    labels.push_back(label);
  }
  return make_dataset(images, std::move(labels));
}

}  // namespace deepmim
