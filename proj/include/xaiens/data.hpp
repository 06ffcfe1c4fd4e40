// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xaiens/tensor.hpp"

namespace xaiens {

enum class Split { train, test };

struct ImageSample {
  std::string id;
  Tensor image;  // [3, H, W] in [0,1] as loaded; augmentation may normalize
  Tensor mask;   // [H, W] in {0,1}
  int label = 0;
  Split split = Split::train;
};

struct Dataset {
  std::vector<ImageSample> samples;
  std::vector<std::string> class_names;
  uint64_t seed = 0;

  std::vector<int> split_indices(Split s) const;
  const ImageSample* find(const std::string& id) const;
};

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;
};

namespace data {

/// Loads `<root>/images/<stem>.png` + `<root>/masks/<stem>.png` pairs,
/// resizes to `side`, and splits train/test per class with the given ratio.
Dataset load_dataset(const std::filesystem::path& root, double split_ratio,
                     uint64_t seed, int side = 224);

enum class ShapeKind { circle, square, triangle };
ShapeKind shape_kind_from_name(const std::string& name);
const char* shape_kind_name(ShapeKind kind);

/// Synthetic dataset: one filled shape per image over a textured noise
/// background. Masks are the exact shape interior.
Dataset generate_synthetic_shapes(int n, int side,
                                  const std::vector<ShapeKind>& classes,
                                  uint64_t seed);

/// Writes dataset images/masks plus a `manifest` line per sample
/// (stem, label, seed) under root.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);

FoldAssignment kfold_split(const Dataset& ds, int k, uint64_t seed);

/// Applies a fold assignment: fold `test_fold` becomes the test split.
Dataset apply_fold(const Dataset& ds, const FoldAssignment& folds, int test_fold);

struct AugmentConfig {
  double center_crop_fraction = 1.0;
  bool normalize = true;
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev = {0.5f, 0.5f, 0.5f};

  double prob = 0.5;  // per-transform gate probability
  double max_shift_frac = 0.10;
  double scale_lo = 0.9, scale_hi = 1.1;
  double max_rotate_deg = 15.0;
  double max_hue_shift = 0.05;
  double saturation_lo = 0.8, saturation_hi = 1.2;

  /// Turns off every random transform; crop/normalization still apply.
  static AugmentConfig identity();
};

/// Seeded augmentation: center crop, hue/saturation jitter (image only),
/// shift/scale/rotation, flips and 90-degree rotations applied identically
/// to image and mask (nearest-neighbor for the mask), then channel
/// normalization of the image. The mask stays binary throughout.
ImageSample augment(const ImageSample& sample, uint64_t seed,
                    const AugmentConfig& cfg = {});

/// Channel normalization only (the deterministic part of augment).
Tensor normalize_image(const Tensor& image, const std::array<float, 3>& mean,
                       const std::array<float, 3>& stddev);

}  // namespace data
}  // namespace xaiens
