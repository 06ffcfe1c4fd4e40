// SPDX-License-Identifier: Apache-2.0
#include "xaiens/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "xaiens/image.hpp"

namespace xaiens {

std::vector<int> Dataset::split_indices(Split s) const {
  std::vector<int> idx;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == s) idx.push_back(static_cast<int>(i));
  return idx;
}

const ImageSample* Dataset::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

namespace data {

namespace fs = std::filesystem;

Dataset load_dataset(const fs::path& root, double split_ratio, uint64_t seed,
                     int side) {
  require(split_ratio > 0.0 && split_ratio < 1.0, ErrorCode::invalid_argument,
          "split_ratio must be in (0,1)");
  const fs::path images_dir = root / "images";
  const fs::path masks_dir = root / "masks";
  require(fs::is_directory(images_dir), ErrorCode::io,
          "missing images directory: " + images_dir.string());
  require(fs::is_directory(masks_dir), ErrorCode::io,
          "missing masks directory: " + masks_dir.string());

  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.path().extension() == ".png") stems.push_back(entry.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  require(!stems.empty(), ErrorCode::io, "no images found under " + images_dir.string());

  // Optional manifest supplies labels; without one everything is class 0.
  std::map<std::string, std::pair<int, std::string>> manifest;  // stem -> (label, name)
  std::vector<std::string> class_names;
  {
    std::ifstream mf(root / "manifest");
    std::string stem, name;
    int label;
    uint64_t sample_seed;
    while (mf >> stem >> label >> name >> sample_seed) {
      manifest[stem] = {label, name};
      if (label >= static_cast<int>(class_names.size()))
        class_names.resize(label + 1);
      class_names[label] = name;
    }
  }
  if (class_names.empty()) class_names = {"object"};

  Dataset ds;
  ds.seed = seed;
  ds.class_names = class_names;
  for (const auto& stem : stems) {
    const fs::path mask_path = masks_dir / (stem + ".png");
    require(fs::exists(mask_path), ErrorCode::io,
            "missing mask for image stem '" + stem + "'");
    ImageSample s;
    s.id = stem;
    s.image = img::read_png_rgb(images_dir / (stem + ".png"));
    s.mask = img::read_png_mask(mask_path);
    require(s.image.dim(1) == s.mask.dim(0) && s.image.dim(2) == s.mask.dim(1),
            ErrorCode::io, "image/mask size mismatch for stem '" + stem + "'");
    if (s.image.dim(1) != side || s.image.dim(2) != side) {
      s.image = img::resize_bilinear_chw(s.image, side, side);
      s.mask = img::resize_nearest_hw(s.mask, side, side);
    }
    auto it = manifest.find(stem);
    s.label = it != manifest.end() ? it->second.first : 0;
    ds.samples.push_back(std::move(s));
  }

  // Deterministic stratified split: shuffle within each class, then take the
  // first round(ratio * n_c) samples for training.
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    by_class[ds.samples[i].label].push_back(static_cast<int>(i));
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, {"split", std::to_string(label)}));
    rng.shuffle(idx);
    const auto n_train = static_cast<size_t>(
        std::lround(split_ratio * static_cast<double>(idx.size())));
    for (size_t i = 0; i < idx.size(); ++i)
      ds.samples[idx[i]].split = i < n_train ? Split::train : Split::test;
  }
  // Both splits must be nonempty overall.
  auto train_n = ds.split_indices(Split::train).size();
  auto test_n = ds.split_indices(Split::test).size();
  if (train_n == 0 || test_n == 0) {
    require(ds.samples.size() >= 2, ErrorCode::invalid_argument,
            "dataset too small to split");
    if (train_n == 0) ds.samples.front().split = Split::train;
    if (test_n == 0) ds.samples.back().split = Split::test;
  }
  return ds;
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "circle") return ShapeKind::circle;
  if (name == "square") return ShapeKind::square;
  if (name == "triangle") return ShapeKind::triangle;
  fail(ErrorCode::invalid_argument, "unknown shape kind: " + name);
}

const char* shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

namespace {

Tensor textured_background(int side, Rng& rng) {
  // Smooth value noise plus per-pixel jitter.
  const int grid = 8;
  Tensor coarse({3, grid, grid});
  for (auto& v : coarse.vec()) v = rng.uniformf(0.15f, 0.85f);
  Tensor bg = img::resize_bilinear_chw(coarse, side, side);
  for (auto& v : bg.vec())
    v = std::clamp(v + rng.uniformf(-0.08f, 0.08f), 0.f, 1.f);
  return bg;
}

void paint_shape(Tensor& image, Tensor& mask, ShapeKind kind, int side, Rng& rng) {
  const int h = side, w = side;
  // Contrasting shape color: push each channel away from the local mean.
  float bg_mean[3];
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int i = 0; i < h * w; ++i) s += image.vec()[static_cast<size_t>(c) * h * w + i];
    bg_mean[c] = static_cast<float>(s / (h * w));
  }
  float color[3];
  for (int c = 0; c < 3; ++c) {
    const float delta = rng.uniformf(0.3f, 0.5f);
    color[c] = bg_mean[c] > 0.5f ? bg_mean[c] - delta : bg_mean[c] + delta;
    color[c] = std::clamp(color[c], 0.f, 1.f);
  }

  auto set_pixel = [&](int y, int x) {
    mask.at(y, x) = 1.f;
    for (int c = 0; c < 3; ++c) {
      const float jitter = rng.uniformf(-0.05f, 0.05f);
      image.at(c, y, x) = std::clamp(color[c] + jitter, 0.f, 1.f);
    }
  };

  switch (kind) {
    case ShapeKind::circle: {
      const int r = static_cast<int>(rng.uniform_int(side / 8)) + side / 8;
      const int cx = r + 1 + static_cast<int>(rng.uniform_int(w - 2 * r - 2));
      const int cy = r + 1 + static_cast<int>(rng.uniform_int(h - 2 * r - 2));
      for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) set_pixel(y, x);
      break;
    }
    case ShapeKind::square: {
      // Axis-aligned with integer corners: mask area is exactly sw*sh.
      const int sw = side / 4 + static_cast<int>(rng.uniform_int(side / 4));
      const int sh = side / 4 + static_cast<int>(rng.uniform_int(side / 4));
      const int x0 = static_cast<int>(rng.uniform_int(w - sw));
      const int y0 = static_cast<int>(rng.uniform_int(h - sh));
      for (int y = y0; y < y0 + sh; ++y)
        for (int x = x0; x < x0 + sw; ++x) set_pixel(y, x);
      break;
    }
    case ShapeKind::triangle: {
      const int half = side / 8 + static_cast<int>(rng.uniform_int(side / 8));
      const int cx = half + 1 + static_cast<int>(rng.uniform_int(w - 2 * half - 2));
      const int cy = half + 1 + static_cast<int>(rng.uniform_int(h - 2 * half - 2));
      // Upward triangle: apex (cx, cy-half), base corners (cx +- half, cy+half).
      const double x1 = cx, y1 = cy - half;
      const double x2 = cx - half, y2 = cy + half;
      const double x3 = cx + half, y3 = cy + half;
      auto sign = [](double ax, double ay, double bx, double by, double px, double py) {
        return (px - bx) * (ay - by) - (ax - bx) * (py - by);
      };
      for (int y = cy - half; y <= cy + half; ++y)
        for (int x = cx - half; x <= cx + half; ++x) {
          const double d1 = sign(x1, y1, x2, y2, x, y);
          const double d2 = sign(x2, y2, x3, y3, x, y);
          const double d3 = sign(x3, y3, x1, y1, x, y);
          const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
          const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
          if (!(has_neg && has_pos)) set_pixel(y, x);
        }
      break;
    }
  }
}

}  // namespace

Dataset generate_synthetic_shapes(int n, int side,
                                  const std::vector<ShapeKind>& classes,
                                  uint64_t seed) {
  require(n >= 2, ErrorCode::invalid_argument, "need at least 2 samples");
  require(side >= 32, ErrorCode::invalid_argument, "side must be >= 32");
  require(!classes.empty(), ErrorCode::invalid_argument, "need at least one class");

  Dataset ds;
  ds.seed = seed;
  for (const auto& kind : classes) ds.class_names.emplace_back(shape_kind_name(kind));

  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {"sample", std::to_string(i)}));
    const int label = i % static_cast<int>(classes.size());
    ImageSample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%05d", i);
    s.id = buf;
    s.label = label;
    s.image = textured_background(side, rng);
    s.mask = Tensor({side, side});
    paint_shape(s.image, s.mask, classes[static_cast<size_t>(label)], side, rng);
    // Match what a PNG write/read round trip would produce.
    s.image = img::quantize_u8(s.image);
    ds.samples.push_back(std::move(s));
  }

  // Stratified split with the default 80/20 ratio; callers that need a
  // custom ratio re-split after writing via load_dataset.
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    by_class[ds.samples[i].label].push_back(static_cast<int>(i));
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, {"split", std::to_string(label)}));
    rng.shuffle(idx);
    const auto n_train =
        static_cast<size_t>(std::lround(0.8 * static_cast<double>(idx.size())));
    for (size_t i = 0; i < idx.size(); ++i)
      ds.samples[idx[i]].split = i < n_train ? Split::train : Split::test;
  }
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream manifest(root / "manifest");
  require(manifest.good(), ErrorCode::io, "cannot write manifest under " + root.string());
  for (const auto& s : ds.samples) {
    img::write_png_rgb(root / "images" / (s.id + ".png"), s.image);
    img::write_png_mask(root / "masks" / (s.id + ".png"), s.mask);
    manifest << s.id << ' ' << s.label << ' '
             << ds.class_names[static_cast<size_t>(s.label)] << ' ' << ds.seed << '\n';
  }
}

FoldAssignment kfold_split(const Dataset& ds, int k, uint64_t seed) {
  require(k >= 2, ErrorCode::invalid_argument, "k must be >= 2");
  require(static_cast<int>(ds.samples.size()) >= k, ErrorCode::invalid_argument,
          "k exceeds dataset size");
  std::vector<int> idx(ds.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(derive_seed(seed, {"kfold"}));
  rng.shuffle(idx);

  FoldAssignment fa;
  fa.k = k;
  for (size_t pos = 0; pos < idx.size(); ++pos)
    fa.fold_of[ds.samples[static_cast<size_t>(idx[pos])].id] =
        static_cast<int>(pos % static_cast<size_t>(k));
  return fa;
}

Dataset apply_fold(const Dataset& ds, const FoldAssignment& folds, int test_fold) {
  require(test_fold >= 0 && test_fold < folds.k, ErrorCode::invalid_argument,
          "test fold out of range");
  Dataset out = ds;
  for (auto& s : out.samples) {
    auto it = folds.fold_of.find(s.id);
    require(it != folds.fold_of.end(), ErrorCode::invalid_argument,
            "sample missing from fold assignment: " + s.id);
    s.split = it->second == test_fold ? Split::test : Split::train;
  }
  return out;
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig cfg;
  cfg.prob = 0.0;
  return cfg;
}

Tensor normalize_image(const Tensor& image, const std::array<float, 3>& mean,
                       const std::array<float, 3>& stddev) {
  Tensor out = image;
  const int H = image.dim(1), W = image.dim(2);
  for (int c = 0; c < 3; ++c) {
    const float m = mean[static_cast<size_t>(c)];
    const float sd = stddev[static_cast<size_t>(c)];
    for (int i = 0; i < H * W; ++i) {
      auto& v = out.vec()[static_cast<size_t>(c) * H * W + i];
      v = (v - m) / sd;
    }
  }
  return out;
}

ImageSample augment(const ImageSample& sample, uint64_t seed,
                    const AugmentConfig& cfg) {
  Rng rng(derive_seed(seed, {"augment", sample.id}));
  ImageSample out = sample;

  if (cfg.center_crop_fraction < 1.0) {
    out.image = img::center_crop_resize_chw(out.image, cfg.center_crop_fraction);
    out.mask = img::center_crop_resize_nearest_hw(out.mask, cfg.center_crop_fraction);
  }

  // Photometric jitter applies to the image only.
  if (rng.bernoulli(cfg.prob)) {
    const double hue = rng.uniform(-cfg.max_hue_shift, cfg.max_hue_shift);
    const double sat = rng.uniform(cfg.saturation_lo, cfg.saturation_hi);
    out.image = img::adjust_hue_saturation(out.image, hue, sat);
  }

  // One combined shift/scale/rotation warp, geometry shared with the mask.
  if (rng.bernoulli(cfg.prob)) {
    const int side = out.image.dim(1);
    const double shift_x = rng.uniform(-cfg.max_shift_frac, cfg.max_shift_frac) * side;
    const double shift_y = rng.uniform(-cfg.max_shift_frac, cfg.max_shift_frac) * side;
    const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double angle = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * M_PI / 180.0;
    out.image = img::warp_affine_chw(out.image, angle, scale, shift_x, shift_y);
    out.mask = img::warp_affine_nearest_hw(out.mask, angle, scale, shift_x, shift_y);
  }

  if (rng.bernoulli(cfg.prob)) {
    out.image = img::flip_horizontal(out.image);
    out.mask = img::flip_horizontal(out.mask);
  }
  if (rng.bernoulli(cfg.prob)) {
    out.image = img::flip_vertical(out.image);
    out.mask = img::flip_vertical(out.mask);
  }
  if (rng.bernoulli(cfg.prob)) {
    const int quarters = 1 + static_cast<int>(rng.uniform_int(3));
    out.image = img::rotate90(out.image, quarters);
    out.mask = img::rotate90(out.mask, quarters);
  }

  // Re-binarize: geometric interpolation must not leave fractional values.
  for (auto& v : out.mask.vec()) v = v > 0.5f ? 1.f : 0.f;

  if (cfg.normalize) out.image = normalize_image(out.image, cfg.mean, cfg.stddev);
  return out;
}

}  // namespace data
}  // namespace xaiens
