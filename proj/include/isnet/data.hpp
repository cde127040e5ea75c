#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "isnet/loss.hpp"
#include "isnet/tensor.hpp"

namespace isnet {

// One image with its exact label map. image: [3,H,W] in [0,1].
struct Sample {
  Tensor<float> image;
  std::vector<std::uint8_t> label;
  std::uint16_t classes = 0;

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
  bool operator==(const Sample&) const = default;
};

// Probability that an image shows exactly the object classes {a, b}
// (a == b: a single object class). The entries form a distribution.
struct PairProbability {
  std::uint16_t a = 0;
  std::uint16_t b = 0;
  double p = 0;
};

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t train_count = 512;
  std::size_t val_count = 128;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 5;  // background + object classes
  double noise = 0.05;
  // Shape extents as fractions of the image extents.
  double min_extent = 0.15;
  double max_extent = 0.6;
  // Color distance between classes 1 and 2. At 0 they look identical and only
  // the partner object they tend to appear with tells them apart.
  double twin_gap = 0.0;
  // Empty means the default table for `classes`.
  std::vector<PairProbability> pairs;

  // Effective table: `pairs`, or the default for this class count.
  std::vector<PairProbability> table() const;
  // Symmetric K x K view: probability that classes i and j share an image.
  double cooccurrence(std::size_t i, std::size_t j) const;
  std::size_t count() const { return train_count + val_count; }
  void validate() const;
};

// RGB base color of a class. Class 2 is class 1 shifted by twin_gap in red
// (down) and green (up).
std::array<float, 3> class_color(std::size_t cls, double twin_gap = 0.0);

// Pure function of (spec.seed, index): two or one object shapes painted over
// background with Gaussian noise.
Sample generate(const DatasetSpec& spec, std::size_t index);

enum class Split { train, val };
std::string_view to_string(Split s);
Split parse_split(std::string_view name);

// Train sample i is generate(2i), validation sample j is generate(2j + 1).
std::size_t global_index(Split split, std::size_t i);
std::size_t split_count(const DatasetSpec& spec, Split split);
Sample generate_split(const DatasetSpec& spec, Split split, std::size_t i);

struct AugmentOptions {
  double scale_min = 0.5;
  double scale_max = 2.0;
  std::size_t crop_height = 64;
  std::size_t crop_width = 64;
  bool flip = true;
};

// Bilinear image / nearest-neighbour label resize to out_h x out_w.
Sample rescale(const Sample& s, std::size_t out_h, std::size_t out_w);
// Pads bottom/right to at least h x w with image 0 and ignore labels.
Sample pad_to(const Sample& s, std::size_t h, std::size_t w);
Sample crop(const Sample& s, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
Sample flip_horizontal(const Sample& s);

// Random scale, pad, crop and left-right flip. UsageError unless the crop
// extents are positive multiples of 8.
Sample augment_train(const Sample& s, std::mt19937_64& rng, const AugmentOptions& opts);

struct Batch {
  Tensor<float> images;  // [B,3,H,W]
  GroundTruth truth;
  std::uint16_t classes = 0;
};

Batch make_batch(std::span<const Sample> samples);
std::vector<Sample> unbatch(const Batch& batch);

// ISEG: "ISEG", u8 version 1, u32 H, u32 W, u16 K, 3*H*W float32, H*W u8,
// little endian.
std::vector<std::uint8_t> encode_sample(const Sample& s);
Sample decode_sample(std::span<const std::uint8_t> bytes);
void save_sample(const std::filesystem::path& path, const Sample& s);
Sample load_sample(const std::filesystem::path& path);

// {root}/{split}/{index:06}.iseg
std::filesystem::path sample_path(const std::filesystem::path& root, Split split, std::size_t index);
void write_dataset(const DatasetSpec& spec, const std::filesystem::path& root);
// All samples of a split in index order; DataError if the directory is
// missing or empty or the numbering has gaps.
std::vector<Sample> load_split(const std::filesystem::path& root, Split split);

}  // namespace isnet
