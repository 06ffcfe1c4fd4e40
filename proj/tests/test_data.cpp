// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "xaiens/data.hpp"
#include "xaiens/image.hpp"

using namespace xaiens;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("xaiens_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool masks_binary(const Dataset& ds) {
  for (const auto& s : ds.samples)
    for (float v : s.mask.vec())
      if (v != 0.f && v != 1.f) return false;
  return true;
}

}  // namespace

TEST_CASE("synthetic generator: counts, masks, determinism") {
  const auto ds = data::generate_synthetic_shapes(
      4, 64, {data::ShapeKind::circle}, 0);
  CHECK(ds.samples.size() == 4);
  for (const auto& s : ds.samples) {
    CHECK(s.image.dims() == std::vector<int>{3, 64, 64});
    CHECK(s.mask.dims() == std::vector<int>{64, 64});
    CHECK(s.mask.sum() > 0.0);  // every mask nonempty
  }
  CHECK(masks_binary(ds));

  const auto again = data::generate_synthetic_shapes(
      4, 64, {data::ShapeKind::circle}, 0);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(bitwise_equal(ds.samples[i].image, again.samples[i].image));
    CHECK(bitwise_equal(ds.samples[i].mask, again.samples[i].mask));
  }

  CHECK_THROWS_AS(data::generate_synthetic_shapes(1, 64, {data::ShapeKind::circle}, 0),
                  Error);
}

TEST_CASE("synthetic squares have exact rectangular mask area") {
  // Axis-aligned squares rasterize exactly: the mask must be a full
  // rectangle, i.e. area == bounding-box width * height.
  const auto ds = data::generate_synthetic_shapes(
      8, 64, {data::ShapeKind::square}, 3);
  for (const auto& s : ds.samples) {
    int x0 = 64, x1 = -1, y0 = 64, y1 = -1, area = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (s.mask.at(y, x) > 0.f) {
          ++area;
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    REQUIRE(area > 0);
    CHECK(area == (x1 - x0 + 1) * (y1 - y0 + 1));
  }
}

TEST_CASE("synthetic circles approximate analytic area") {
  const auto ds = data::generate_synthetic_shapes(
      6, 64, {data::ShapeKind::circle}, 5);
  for (const auto& s : ds.samples) {
    // Radius recovered from the bounding box; pixel count must be within
    // one perimeter's worth of the analytic area.
    int x0 = 64, x1 = -1, y0 = 64, y1 = -1;
    double area = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (s.mask.at(y, x) > 0.f) {
          ++area;
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    const double r = (x1 - x0 + y1 - y0 + 2) / 4.0;
    const double analytic = M_PI * r * r;
    CHECK(std::fabs(area - analytic) <= 2.0 * M_PI * r + 8.0);
  }
}

TEST_CASE("dataset write + load round trip and split arithmetic") {
  const auto dir = temp_dir("roundtrip");
  auto ds = data::generate_synthetic_shapes(
      10, 32, {data::ShapeKind::circle, data::ShapeKind::square}, 7);
  data::write_dataset(ds, dir);

  const auto loaded = data::load_dataset(dir, 0.8, 7, 32);
  CHECK(loaded.samples.size() == 10);
  CHECK(loaded.split_indices(Split::train).size() == 8);
  CHECK(loaded.split_indices(Split::test).size() == 2);
  CHECK(loaded.class_names.size() == 2);
  CHECK(masks_binary(loaded));

  // Images round trip bit-exactly because generation pre-quantizes to u8.
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto* found = loaded.find(ds.samples[i].id);
    REQUIRE(found != nullptr);
    CHECK(bitwise_equal(found->image, ds.samples[i].image));
    CHECK(bitwise_equal(found->mask, ds.samples[i].mask));
    CHECK(found->label == ds.samples[i].label);
  }

  // Same seed -> identical split on a second load.
  const auto loaded2 = data::load_dataset(dir, 0.8, 7, 32);
  for (size_t i = 0; i < loaded.samples.size(); ++i)
    CHECK(loaded.samples[i].split == loaded2.samples[i].split);

  // Missing mask is a hard error naming the stem.
  fs::remove(dir / "masks" / (ds.samples[3].id + ".png"));
  try {
    (void)data::load_dataset(dir, 0.8, 7, 32);
    FAIL("expected missing-mask error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(ds.samples[3].id) != std::string::npos);
  }
}

TEST_CASE("kfold split partitions the dataset") {
  const auto ds = data::generate_synthetic_shapes(
      10, 32, {data::ShapeKind::circle}, 1);
  const auto folds = data::kfold_split(ds, 5, 11);
  CHECK(folds.k == 5);
  CHECK(folds.fold_of.size() == 10);

  std::map<int, int> sizes;
  for (const auto& [id, f] : folds.fold_of) {
    CHECK(f >= 0);
    CHECK(f < 5);
    sizes[f]++;
  }
  CHECK(sizes.size() == 5);
  for (const auto& [f, n] : sizes) CHECK(n == 2);

  const auto again = data::kfold_split(ds, 5, 11);
  CHECK(folds.fold_of == again.fold_of);

  CHECK_THROWS_AS(data::kfold_split(ds, 11, 0), Error);
  CHECK_THROWS_AS(data::kfold_split(ds, 1, 0), Error);

  const auto view = data::apply_fold(ds, folds, 0);
  CHECK(view.split_indices(Split::test).size() == 2);
  CHECK(view.split_indices(Split::train).size() == 8);
}

TEST_CASE("fold sizes differ by at most one when k does not divide n") {
  const auto ds = data::generate_synthetic_shapes(
      13, 32, {data::ShapeKind::circle}, 2);
  const auto folds = data::kfold_split(ds, 5, 3);
  std::map<int, int> sizes;
  for (const auto& [id, f] : folds.fold_of) sizes[f]++;
  int mn = 1 << 20, mx = 0;
  for (const auto& [f, n] : sizes) {
    mn = std::min(mn, n);
    mx = std::max(mx, n);
  }
  CHECK(mx - mn <= 1);
}

TEST_CASE("augment: identity draw changes nothing except normalization") {
  const auto ds = data::generate_synthetic_shapes(
      2, 32, {data::ShapeKind::square}, 9);
  const auto& s = ds.samples[0];

  data::AugmentConfig ident = data::AugmentConfig::identity();
  ident.normalize = false;
  const auto same = data::augment(s, 123, ident);
  CHECK(bitwise_equal(same.image, s.image));
  CHECK(bitwise_equal(same.mask, s.mask));

  data::AugmentConfig norm_only = data::AugmentConfig::identity();
  const auto normalized = data::augment(s, 123, norm_only);
  CHECK(bitwise_equal(normalized.mask, s.mask));
  // mean 0.5 / std 0.5 remaps [0,1] to [-1,1].
  for (size_t i = 0; i < s.image.size(); ++i)
    CHECK(normalized.image[i] == doctest::Approx((s.image[i] - 0.5f) / 0.5f));
}

TEST_CASE("augment: geometric transforms move image and mask together") {
  const auto ds = data::generate_synthetic_shapes(
      2, 32, {data::ShapeKind::square}, 13);
  const auto& s = ds.samples[0];

  // Force the flip path by probability 1 with zero-magnitude everything else.
  data::AugmentConfig cfg = data::AugmentConfig::identity();
  cfg.prob = 1.0;
  cfg.normalize = false;
  cfg.max_shift_frac = 0.0;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  cfg.max_rotate_deg = 0.0;
  cfg.max_hue_shift = 0.0;
  cfg.saturation_lo = cfg.saturation_hi = 1.0;

  for (uint64_t seed : {1ull, 2ull, 5ull, 9ull, 42ull}) {
    const auto aug = data::augment(s, seed, cfg);
    // Masks stay binary and keep their pixel count under flips/rot90 and
    // identity warps.
    double area = 0;
    for (float v : aug.mask.vec()) {
      CHECK((v == 0.f || v == 1.f));
      area += v;
    }
    CHECK(area == doctest::Approx(s.mask.sum()));
  }
}

TEST_CASE("augment: photometric transforms leave the mask untouched") {
  const auto ds = data::generate_synthetic_shapes(
      2, 32, {data::ShapeKind::circle}, 17);
  const auto& s = ds.samples[0];
  data::AugmentConfig cfg = data::AugmentConfig::identity();
  cfg.prob = 1.0;
  cfg.normalize = false;
  // Zero out geometry so only hue/saturation fires.
  cfg.max_shift_frac = 0.0;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  cfg.max_rotate_deg = 0.0;

  // Undo flips/rot90 effects by comparing against an equally transformed
  // mask: with geometry disabled except flips, mask area is preserved and
  // the deterministic seed lets us compare two runs.
  const auto a = data::augment(s, 77, cfg);
  const auto b = data::augment(s, 77, cfg);
  CHECK(bitwise_equal(a.image, b.image));
  CHECK(bitwise_equal(a.mask, b.mask));
  CHECK(a.mask.sum() == doctest::Approx(s.mask.sum()));
}

TEST_CASE("flip-only draw equals flipped original exactly") {
  const auto ds = data::generate_synthetic_shapes(
      2, 32, {data::ShapeKind::triangle}, 19);
  const auto& s = ds.samples[0];
  const Tensor flipped_img = img::flip_horizontal(s.image);
  const Tensor flipped_mask = img::flip_horizontal(s.mask);
  CHECK(bitwise_equal(img::flip_horizontal(flipped_img), s.image));
  CHECK(bitwise_equal(img::flip_horizontal(flipped_mask), s.mask));
  // rotate90 composes to identity after four quarter turns.
  CHECK(bitwise_equal(img::rotate90(s.image, 4), s.image));
  CHECK(bitwise_equal(img::rotate90(img::rotate90(s.image, 1), 3), s.image));
}
