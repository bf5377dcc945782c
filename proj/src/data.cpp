#include "vitforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vitforge/error.hpp"
#include "vitforge/image_io.hpp"

namespace fs = std::filesystem;

namespace vitforge {

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm" || ext == ".png";
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

void probe_or_throw(const fs::path& path) {
  try {
    probe_image(path);
  } catch (const Error& e) {
    throw IngestionError(std::string("undecodable image ") + e.what());
  }
}

DatasetIndex load_manifest(const fs::path& root) {
  const fs::path manifest = root / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw IngestionError("cannot read " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,label") {
    throw IngestionError(manifest.string() + ": header must be exactly 'path,label'");
  }
  std::vector<std::pair<fs::path, std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == line.size()) {
      throw IngestionError(manifest.string() + ":" + std::to_string(line_no) + ": expected path,label");
    }
    fs::path p = trim(line.substr(0, comma));
    if (p.is_relative()) p = root / p;
    rows.emplace_back(p, trim(line.substr(comma + 1)));
  }
  if (rows.empty()) throw IngestionError(manifest.string() + ": no samples");
  std::set<std::string> vocab;
  for (const auto& r : rows) vocab.insert(r.second);
  DatasetIndex index;
  index.root = root;
  index.classes.assign(vocab.begin(), vocab.end());
  if (index.classes.size() < 2) throw IngestionError(manifest.string() + ": fewer than two classes");
  std::sort(rows.begin(), rows.end());
  for (const auto& [path, label] : rows) {
    if (!fs::is_regular_file(path)) throw IngestionError("manifest entry missing on disk: " + path.string());
    probe_or_throw(path);
    index.samples.push_back(Sample{path, index.class_index(label), label});
  }
  return index;
}

}  // namespace

std::vector<int> DatasetIndex::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.class_index);
  return out;
}

int DatasetIndex::class_index(std::string_view name) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), name);
  if (it == classes.end() || *it != name) {
    throw ValidationError("unknown class '" + std::string(name) + "'");
  }
  return static_cast<int>(it - classes.begin());
}

DatasetIndex load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IngestionError("dataset root is not a directory: " + root.string());
  if (fs::is_regular_file(root / "manifest.csv")) return load_manifest(root);

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  if (class_dirs.empty()) throw IngestionError("dataset root has no class directories: " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  DatasetIndex index;
  index.root = root;
  for (const auto& dir : class_dirs) index.classes.push_back(dir.filename().string());
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c]))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    if (files.empty()) throw IngestionError("class directory holds no images: " + class_dirs[c].string());
    for (auto& f : files) {
      probe_or_throw(f);
      index.samples.push_back(Sample{std::move(f), static_cast<int>(c), index.classes[c]});
    }
  }
  std::sort(index.samples.begin(), index.samples.end(),
            [](const Sample& a, const Sample& b) { return a.path < b.path; });
  return index;
}

PreprocessConfig PreprocessConfig::for_image_size(std::size_t image_size) {
  PreprocessConfig c;
  c.crop = image_size;
  c.resize_shorter = (image_size * 256 + 112) / 224;
  return c;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected C×H×W, got " + shape_str(image.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: zero output extent");
  const std::size_t c = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);

  struct Tap {
    std::size_t i0, i1;
    float frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[i] = {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);
  Tensor<float> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& [y0, y1, fy] = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& [x0, x1, fx] = tx[x];
        const float top = image.at(ch, y0, x0) * (1 - fx) + image.at(ch, y0, x1) * fx;
        const float bottom = image.at(ch, y1, x0) * (1 - fx) + image.at(ch, y1, x1) * fx;
        out.at(ch, y, x) = top * (1 - fy) + bottom * fy;
      }
    }
  return out;
}

Tensor<float> resize_shorter_side(const Tensor<float>& image, std::size_t size) {
  if (image.rank() != 3) throw ShapeError("resize_shorter_side: expected C×H×W");
  if (size == 0) throw ValidationError("resize_shorter_side: size must be positive");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h <= w) return resize_bilinear(image, size, std::max<std::size_t>(1, w * size / h));
  return resize_bilinear(image, std::max<std::size_t>(1, h * size / w), size);
}

Tensor<float> crop(const Tensor<float>& image, std::size_t top, std::size_t left, std::size_t h,
                   std::size_t w) {
  if (image.rank() != 3) throw ShapeError("crop: expected C×H×W");
  if (h == 0 || w == 0 || top + h > image.dim(1) || left + w > image.dim(2)) {
    throw ShapeError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") exceeds " +
                     shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0);
  Tensor<float> out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, top + y, left + x);
  return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("flip_horizontal: expected C×H×W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

Tensor<float> normalize(const Tensor<float>& image, const PreprocessConfig& config) {
  if (image.rank() != 3 || image.dim(0) != config.mean.size()) {
    throw ShapeError("normalize: expected 3×H×W, got " + shape_str(image.shape()));
  }
  Tensor<float> out = image;
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      out[ch * plane + i] = (image[ch * plane + i] - config.mean[ch]) / config.std[ch];
  return out;
}

Tensor<float> denormalize(const Tensor<float>& image, const PreprocessConfig& config) {
  if (image.rank() != 3 || image.dim(0) != config.mean.size()) {
    throw ShapeError("denormalize: expected 3×H×W, got " + shape_str(image.shape()));
  }
  Tensor<float> out = image;
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      out[ch * plane + i] = image[ch * plane + i] * config.std[ch] + config.mean[ch];
  return out;
}

CropFlip draw_crop_flip(std::size_t height, std::size_t width, std::size_t crop_size, Rng& rng) {
  if (height < crop_size || width < crop_size) {
    throw ShapeError("random crop " + std::to_string(crop_size) + " larger than image " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  CropFlip cf;
  cf.top = rng.uniform_index(height - crop_size + 1);
  cf.left = rng.uniform_index(width - crop_size + 1);
  cf.flip = rng.bernoulli(0.5);
  return cf;
}

Tensor<float> resize_for_crop(const Tensor<float>& image, const PreprocessConfig& config) {
  if (image.rank() != 3 || image.empty()) {
    throw ShapeError("preprocess: expected non-empty C×H×W image, got " + shape_str(image.shape()));
  }
  if (config.crop == 0) throw ValidationError("preprocess: crop size must be positive");
  if (config.resize_shorter != 0 && config.resize_shorter < config.crop) {
    throw ValidationError("preprocess: resize_shorter " + std::to_string(config.resize_shorter) +
                          " is smaller than crop " + std::to_string(config.crop));
  }
  Tensor<float> resized =
      config.resize_shorter ? resize_shorter_side(image, config.resize_shorter) : image;
  if (resized.dim(1) < config.crop || resized.dim(2) < config.crop) {
    throw ShapeError("preprocess: image " + shape_str(resized.shape()) + " smaller than crop " +
                     std::to_string(config.crop));
  }
  return resized;
}

Tensor<float> apply_crop_flip(const Tensor<float>& resized, const CropFlip& cf,
                              const PreprocessConfig& config) {
  Tensor<float> out = crop(resized, cf.top, cf.left, config.crop, config.crop);
  if (cf.flip) out = flip_horizontal(out);
  return normalize(out, config);
}

Tensor<float> augment_train(const Tensor<float>& image, Rng& rng, const PreprocessConfig& config) {
  Tensor<float> resized = resize_for_crop(image, config);
  const CropFlip cf = draw_crop_flip(resized.dim(1), resized.dim(2), config.crop, rng);
  return apply_crop_flip(resized, cf, config);
}

Tensor<float> preprocess_eval(const Tensor<float>& image, const PreprocessConfig& config) {
  Tensor<float> resized = resize_for_crop(image, config);
  CropFlip cf;
  cf.top = (resized.dim(1) - config.crop) / 2;
  cf.left = (resized.dim(2) - config.crop) / 2;
  return apply_crop_flip(resized, cf, config);
}

std::vector<std::size_t> FoldSplit::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldSplit::complement(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(indices[i - 1], indices[j]);
  }
}

FoldSplit kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("kfold_split: need at least 2 folds, got " + std::to_string(k));
  if (n < k) {
    throw ValidationError("kfold_split: " + std::to_string(n) + " samples cannot fill " +
                          std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle_indices(order, rng);
  FoldSplit split{k, std::vector<std::size_t>(n)};
  for (std::size_t pos = 0; pos < n; ++pos) split.fold_of[order[pos]] = pos % k;
  return split;
}

FoldSplit stratified_kfold_split(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw ValidationError("kfold_split: need at least 2 folds, got " + std::to_string(k));
  if (n < k) {
    throw ValidationError("kfold_split: " + std::to_string(n) + " samples cannot fill " +
                          std::to_string(k) + " folds");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  FoldSplit split{k, std::vector<std::size_t>(n)};
  std::size_t counter = 0;
  for (auto& [label, members] : by_class) {
    shuffle_indices(members, rng);
    for (std::size_t idx : members) split.fold_of[idx] = counter++ % k;
  }
  return split;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ValidationError("make_batches: batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle_indices(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void InMemoryImages::add(Tensor<float> image, int label, std::string id) {
  images_.push_back(std::move(image));
  labels_.push_back(label);
  ids_.push_back(std::move(id));
}

DatasetImages::DatasetImages(const DatasetIndex& index, std::vector<std::size_t> members)
    : index_(&index), members_(std::move(members)) {
  for (std::size_t m : members_)
    if (m >= index.samples.size()) throw ValidationError("DatasetImages: sample index out of range");
}

DatasetImages::DatasetImages(const DatasetIndex& index) : index_(&index) {
  members_.resize(index.samples.size());
  for (std::size_t i = 0; i < members_.size(); ++i) members_[i] = i;
}

Tensor<float> DatasetImages::image(std::size_t i) const {
  return decode_image(index_->samples.at(members_.at(i)).path);
}

int DatasetImages::label(std::size_t i) const { return index_->samples.at(members_.at(i)).class_index; }

std::string DatasetImages::id(std::size_t i) const {
  return index_->samples.at(members_.at(i)).path.string();
}

}  // namespace vitforge
