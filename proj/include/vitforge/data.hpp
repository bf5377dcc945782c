#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vitforge/rng.hpp"
#include "vitforge/tensor.hpp"

namespace vitforge {

struct Sample {
  std::filesystem::path path;
  int class_index = 0;
  std::string class_name;
};

struct DatasetIndex {
  std::vector<Sample> samples;       // lexicographic by path
  std::vector<std::string> classes;  // sorted, unique
  std::filesystem::path root;

  std::size_t num_classes() const { return classes.size(); }
  std::vector<int> labels() const;
  /// Position of `name` in the vocabulary; throws ValidationError if absent.
  int class_index(std::string_view name) const;
};

/// Indexes root/<class>/<image> directories, or root/manifest.csv with a
/// `path,label` header (paths relative to root) when that file exists.
/// Every image header is probed so unreadable files fail here, not mid-run.
DatasetIndex load_dataset(const std::filesystem::path& root);

/// Resize/crop/normalize settings. The defaults are the 224-pixel ImageNet
/// recipe.
struct PreprocessConfig {
  std::size_t resize_shorter = 256;  // 0 disables the resize step
  std::size_t crop = 224;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};

  /// Same 256:224 ratio scaled to another model input size.
  static PreprocessConfig for_image_size(std::size_t image_size);
};

/// Bilinear resampling with half-pixel centers (align_corners = false):
/// output pixel i samples source coordinate (i + 0.5)·in/out − 0.5, clamped
/// to the valid range. No antialiasing.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

/// Scales so the shorter side equals `size`; the longer side becomes
/// floor(long·size/short), preserving aspect.
Tensor<float> resize_shorter_side(const Tensor<float>& image, std::size_t size);

Tensor<float> crop(const Tensor<float>& image, std::size_t top, std::size_t left, std::size_t h,
                   std::size_t w);
Tensor<float> flip_horizontal(const Tensor<float>& image);

/// Per-channel (x − mean)/std.
Tensor<float> normalize(const Tensor<float>& image, const PreprocessConfig& config = {});
Tensor<float> denormalize(const Tensor<float>& image, const PreprocessConfig& config = {});

struct CropFlip {
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
};

/// Uniform crop offset over all valid positions, flip with probability ½.
CropFlip draw_crop_flip(std::size_t height, std::size_t width, std::size_t crop_size, Rng& rng);

/// Resize (when enabled) and the pre-resize checks shared by both paths.
Tensor<float> resize_for_crop(const Tensor<float>& image, const PreprocessConfig& config);

/// Crop → optional flip → normalize on an already-resized image.
Tensor<float> apply_crop_flip(const Tensor<float>& resized, const CropFlip& cf,
                              const PreprocessConfig& config);

/// Training path: resize → random crop → random horizontal flip → normalize.
Tensor<float> augment_train(const Tensor<float>& image, Rng& rng, const PreprocessConfig& config = {});

/// Evaluation path: resize → center crop → normalize.
Tensor<float> preprocess_eval(const Tensor<float>& image, const PreprocessConfig& config = {});

/// Fold id per sample index.
struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;

  std::vector<std::size_t> members(std::size_t fold) const;
  std::vector<std::size_t> complement(std::size_t fold) const;
};

/// Seeded shuffle of [0, n) dealt round-robin into k folds.
FoldSplit kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

/// Per-class seeded shuffles dealt round-robin with one running counter, so
/// fold sizes still differ by at most one.
FoldSplit stratified_kfold_split(std::span<const int> labels, std::size_t k, std::uint64_t seed);

/// Fisher-Yates with Rng::uniform_index.
void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng);

/// Seeded permutation of [0, n) chunked into ⌈n/batch_size⌉ batches.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

/// Random-access labeled images, decoded on demand.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  /// 3×H×W in [0,1].
  virtual Tensor<float> image(std::size_t i) const = 0;
  virtual int label(std::size_t i) const = 0;
  /// Stable identity, used to check train/validation disjointness.
  virtual std::string id(std::size_t i) const = 0;
};

class InMemoryImages : public ImageSource {
 public:
  void add(Tensor<float> image, int label, std::string id);

  std::size_t size() const override { return images_.size(); }
  Tensor<float> image(std::size_t i) const override { return images_.at(i); }
  int label(std::size_t i) const override { return labels_.at(i); }
  std::string id(std::size_t i) const override { return ids_.at(i); }

 private:
  std::vector<Tensor<float>> images_;
  std::vector<int> labels_;
  std::vector<std::string> ids_;
};

/// A subset of an indexed dataset on disk.
class DatasetImages : public ImageSource {
 public:
  DatasetImages(const DatasetIndex& index, std::vector<std::size_t> members);
  explicit DatasetImages(const DatasetIndex& index);

  std::size_t size() const override { return members_.size(); }
  Tensor<float> image(std::size_t i) const override;
  int label(std::size_t i) const override;
  std::string id(std::size_t i) const override;

 private:
  const DatasetIndex* index_;
  std::vector<std::size_t> members_;
};

}  // namespace vitforge
