// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xaiens/quality.hpp"

using namespace xaiens;
using namespace xaiens::quality;

namespace {

constexpr int kSide = 16;

AttributionMap map_from(const Tensor& values) {
  AttributionMap m;
  m.method = "test";
  m.range = ValueRange::signed_unit;
  m.values = values;
  return m;
}

LinearClassifier positive_linear(uint64_t seed) {
  Rng rng(seed);
  Tensor w({2, 3 * kSide * kSide});
  // Class 0 weights nonneg; class 1 constant zero so softmax(target=0) is
  // monotone in the class-0 score.
  for (int i = 0; i < w.dim(1); ++i)
    w[static_cast<size_t>(i)] = rng.uniformf(0.f, 2.f) / (3.f * kSide * kSide);
  Tensor b({2});
  return LinearClassifier(std::move(w), std::move(b), kSide);
}

// Brute-force rank correlation with average ties, written independently of
// the implementation (counting-based ranks).
double oracle_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (size_t j = 0; j < v.size(); ++j) {
        if (v[j] < v[i]) ++less;
        if (v[j] == v[i]) ++equal;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return a == b ? 1.0 : 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("pointing game: hits, misses, ties, empty masks") {
  Tensor values({3, 4, 4});
  values.at(0, 2, 3) = 5.f;  // single peak at (2,3)
  Tensor mask({4, 4});
  mask.at(2, 3) = 1.f;
  CHECK(pointing_game(map_from(values), mask) == 1);

  Tensor miss_mask({4, 4});
  miss_mask.at(0, 0) = 1.f;
  CHECK(pointing_game(map_from(values), miss_mask) == 0);

  // Uniform attribution: first row-major pixel wins the tie.
  Tensor uniform({3, 4, 4}, 0.5f);
  Tensor corner({4, 4});
  corner.at(0, 0) = 1.f;
  CHECK(pointing_game(map_from(uniform), corner) == 1);
  Tensor not_corner({4, 4});
  not_corner.at(3, 3) = 1.f;
  CHECK(pointing_game(map_from(uniform), not_corner) == 0);

  Tensor empty({4, 4});
  CHECK_THROWS_AS(pointing_game(map_from(values), empty), Error);
}

TEST_CASE("pointing game invariant under strictly monotone rescaling") {
  Rng rng(5);
  Tensor values({3, 8, 8});
  for (auto& v : values.vec()) v = rng.uniformf(-1.f, 1.f);
  Tensor mask({8, 8});
  for (int i = 0; i < 16; ++i)
    mask[static_cast<size_t>(rng.uniform_int(64))] = 1.f;

  const int base = pointing_game(map_from(values), mask);
  Tensor scaled = values;
  for (auto& v : scaled.vec()) v *= 3.f;
  CHECK(pointing_game(map_from(scaled), mask) == base);
}

TEST_CASE("gini closed forms and properties") {
  // All equal positive values -> 0 (exact for unit entries).
  Tensor uniform = Tensor::from({4}, {1.f, 1.f, 1.f, 1.f});
  CHECK(sparseness_gini(uniform) == 0.0);

  // One-hot of length 4 -> (n-1)/n = 0.75.
  Tensor onehot = Tensor::from({4}, {0.f, 0.f, 1.f, 0.f});
  CHECK(sparseness_gini(onehot) == 0.75);

  // [0,1] -> 0.5.
  Tensor pair = Tensor::from({2}, {0.f, 1.f});
  CHECK(sparseness_gini(pair) == 0.5);

  // All-zero input -> 0 by convention.
  Tensor zeros({8});
  CHECK(sparseness_gini(zeros) == 0.0);

  // Scale invariance and range.
  Rng rng(3);
  Tensor rnd({64});
  for (auto& v : rnd.vec()) v = rng.uniformf(-2.f, 2.f);
  const double g = sparseness_gini(rnd);
  Tensor scaled = rnd;
  for (auto& v : scaled.vec()) v *= 8.f;  // power of two: float-exact scaling
  CHECK(sparseness_gini(scaled) == g);
  Tensor scaled2 = rnd;
  for (auto& v : scaled2.vec()) v *= 7.5f;  // inexact float products
  CHECK(std::fabs(sparseness_gini(scaled2) - g) < 1e-6);
  CHECK(g >= 0.0);
  CHECK(g <= 63.0 / 64.0);
}

TEST_CASE("local lipschitz closed forms") {
  EvalConfig cfg;
  cfg.lipschitz_samples = 6;
  cfg.lipschitz_radius = 0.05;
  cfg.clip_min = -10.f;  // keep perturbations un-clipped
  cfg.clip_max = 10.f;
  cfg.seed = 17;

  Rng rng(1);
  Tensor image({3, 8, 8});
  for (auto& v : image.vec()) v = rng.uniformf(-0.5f, 0.5f);

  const auto constant = [](const Tensor& x) {
    Tensor out = x;
    out.fill(0.25f);
    return out;
  };
  CHECK(local_lipschitz(constant, image, cfg) == 0.0);

  const auto identity = [](const Tensor& x) { return x; };
  CHECK(local_lipschitz(identity, image, cfg) == 1.0);

  const auto twice = [](const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.vec()) v *= 2.f;
    return out;
  };
  CHECK(std::fabs(local_lipschitz(twice, image, cfg) - 2.0) < 1e-9);

  const auto half = [](const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.vec()) v *= 0.5f;
    return out;
  };
  CHECK(std::fabs(local_lipschitz(half, image, cfg) - 0.5) < 1e-9);
}

TEST_CASE("pixel flipping: curve shape, final point, monotone linear case") {
  LinearClassifier model = positive_linear(11);
  Rng rng(2);
  Tensor image({3, kSide, kSide});
  for (auto& v : image.vec()) v = rng.uniformf(0.f, 1.f);

  EvalConfig cfg;
  cfg.flip_step = 0.1;  // 10 steps
  cfg.flip_baseline = 0.f;
  cfg.seed = 5;

  // Self-consistent attribution: the model's own input gradient times input.
  const Tensor grads = model.input_gradients(image, 0, false);
  Tensor attr_v({3, kSide, kSide});
  for (size_t i = 0; i < attr_v.size(); ++i) attr_v[i] = grads[i] * image[i];
  const AttributionMap attr = map_from(attr_v);

  const PixelFlippingResult res = pixel_flipping(model, image, attr, 0, cfg);
  CHECK(res.curve.size() == 11);  // ceil(1/0.1) + 1

  // Non-increasing curve, checked against a brute-force prefix oracle.
  const Tensor reduced = attr.channel_mean_abs();
  std::vector<int> order(kSide * kSide);
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return reduced[static_cast<size_t>(a)] > reduced[static_cast<size_t>(b)];
  });
  Tensor cur = image;
  for (size_t k = 0; k < 10; ++k) {
    const size_t lo = order.size() * k / 10, hi = order.size() * (k + 1) / 10;
    for (size_t i = lo; i < hi; ++i) {
      const int y = order[i] / kSide, x = order[i] % kSide;
      for (int c = 0; c < 3; ++c) cur.at(c, y, x) = 0.f;
    }
    Tensor batch({1, 3, kSide, kSide});
    std::copy(cur.data(), cur.data() + cur.size(), batch.data());
    const Tensor scores = model.forward(batch);
    const double expected = softmax(scores, 0)[0];
    CHECK(res.curve[k + 1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(res.curve[k + 1] <= res.curve[k] + 1e-12);
  }

  // Final entry equals the model's score on the all-baseline image.
  Tensor blank({1, 3, kSide, kSide});
  const double base_score = softmax(model.forward(blank), 0)[0];
  CHECK(std::fabs(res.curve.back() - base_score) < 1e-9);

  // Faithfulness is 1 - mean/initial.
  double mean = 0;
  for (double v : res.curve) mean += v;
  mean /= static_cast<double>(res.curve.size());
  CHECK(res.faithfulness == doctest::Approx(1.0 - mean / res.curve[0]).epsilon(1e-12));
}

TEST_CASE("pixel flipping with all-zero attribution flips row-major") {
  LinearClassifier model = positive_linear(13);
  Tensor image({3, kSide, kSide}, 0.5f);
  EvalConfig cfg;
  cfg.flip_step = 0.25;  // 4 steps
  const AttributionMap attr = map_from(Tensor({3, kSide, kSide}));
  const PixelFlippingResult res = pixel_flipping(model, image, attr, 0, cfg);
  REQUIRE(res.curve.size() == 5);

  // Oracle: flip row-major prefixes directly.
  const size_t hw = kSide * kSide;
  Tensor cur = image;
  for (size_t k = 0; k < 4; ++k) {
    const size_t lo = hw * k / 4, hi = hw * (k + 1) / 4;
    for (size_t i = lo; i < hi; ++i) {
      const int y = static_cast<int>(i) / kSide, x = static_cast<int>(i) % kSide;
      for (int c = 0; c < 3; ++c) cur.at(c, y, x) = 0.f;
    }
    Tensor batch({1, 3, kSide, kSide});
    std::copy(cur.data(), cur.data() + cur.size(), batch.data());
    CHECK(res.curve[k + 1] ==
          doctest::Approx(softmax(model.forward(batch), 0)[0]).epsilon(1e-12));
  }
}

TEST_CASE("spearman rank correlation") {
  CHECK(spearman_rank_correlation({1, 2, 3}, {10, 20, 30}) == 1.0);
  CHECK(spearman_rank_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman_rank_correlation({1, 1, 1}, {1, 1, 1}) == 1.0);  // identical
  CHECK(spearman_rank_correlation({1, 1, 1}, {1, 2, 3}) == 0.0);  // one constant

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(20), b(20);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = std::floor(rng.uniform(0, 5));  // ties likely
      b[i] = std::floor(rng.uniform(0, 5));
    }
    CHECK(spearman_rank_correlation(a, b) ==
          doctest::Approx(oracle_spearman(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("parameter randomisation: model-independent explainer scores zero") {
  ToyCnnClassifier model(kSide, 2, 4, 3);
  Rng rng(6);
  Tensor image({3, kSide, kSide});
  for (auto& v : image.vec()) v = rng.uniformf(-1.f, 1.f);

  EvalConfig cfg;
  cfg.seed = 9;
  const auto ignores_model = [](Classifier&, const Tensor& x) { return x; };
  for (auto mode : {RandomisationMode::cascading, RandomisationMode::independent}) {
    EvalConfig c = cfg;
    c.randomisation_mode = mode;
    const auto res = model_parameter_randomisation(model, ignores_model, image, c);
    CHECK(res.per_layer.size() == 5);  // conv1..conv4 + fc, top-down
    CHECK(res.per_layer.front().first == "fc");
    for (const auto& [name, d] : res.per_layer) CHECK(d == 0.0);
    CHECK(res.score == 0.0);
  }
}

TEST_CASE("parameter randomisation matches a direct Spearman oracle") {
  // One-layer linear model explained by its own input gradient. Recording
  // the attribution produced for the randomized clone lets us recompute the
  // expected distance independently.
  Rng rng(8);
  Tensor w({2, 3 * kSide * kSide});
  for (auto& v : w.vec()) v = rng.uniformf(-1.f, 1.f);
  LinearClassifier model(w, Tensor({2}), kSide);

  std::vector<Tensor> seen;
  const auto grad_explainer = [&seen](Classifier& m, const Tensor& x) {
    Tensor batch({1, 3, kSide, kSide});
    std::copy(x.data(), x.data() + x.size(), batch.data());
    const Tensor g = m.input_gradients(batch, 0, false);
    Tensor out({3, kSide, kSide});
    std::copy(g.data(), g.data() + out.size(), out.data());
    seen.push_back(out);
    return out;
  };

  Tensor image({3, kSide, kSide}, 0.5f);
  EvalConfig cfg;
  cfg.seed = 23;
  cfg.randomisation_mode = RandomisationMode::independent;
  const auto res = model_parameter_randomisation(model, grad_explainer, image, cfg);
  REQUIRE(res.per_layer.size() == 1);
  REQUIRE(seen.size() == 2);  // baseline + randomized

  auto reduce = [](const Tensor& t) {
    std::vector<double> out(kSide * kSide);
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        double acc = 0;
        for (int c = 0; c < 3; ++c) acc += std::fabs(t.at(c, y, x));
        out[static_cast<size_t>(y) * kSide + x] = acc / 3.0;
      }
    return out;
  };
  const double expected = 1.0 - oracle_spearman(reduce(seen[0]), reduce(seen[1]));
  CHECK(res.per_layer[0].second == doctest::Approx(expected).epsilon(1e-12));
  CHECK(res.per_layer[0].second > 0.5);  // fully randomized weights decorrelate

  // The shared model must stay untouched.
  Tensor probe({1, 3, kSide, kSide}, 0.25f);
  const Tensor before = model.forward(probe);
  LinearClassifier fresh(w, Tensor({2}), kSide);
  CHECK(bitwise_equal(before, fresh.forward(probe)));
}

TEST_CASE("radar ranking orders axes with orientation and ties") {
  QualityScores good;
  good.method = "good";
  good.localisation = 0.9;
  good.faithfulness = 0.8;
  good.robustness = 0.1;  // lower better
  good.complexity = 0.7;
  good.randomisation = 0.9;
  QualityScores bad;
  bad.method = "bad";
  bad.localisation = 0.2;
  bad.faithfulness = 0.1;
  bad.robustness = 0.8;
  bad.complexity = 0.3;
  bad.randomisation = 0.2;

  const auto rows = radar_ranking({good, bad});
  REQUIRE(rows.size() == 10);
  for (const auto& row : rows) {
    if (row.method == "good")
      CHECK(row.rank == 2.0);
    else
      CHECK(row.rank == 1.0);
  }

  // Tie on one axis -> both 1.5.
  QualityScores tied = bad;
  tied.method = "tied";
  tied.localisation = good.localisation;
  const auto rows2 = radar_ranking({good, tied});
  for (const auto& row : rows2)
    if (row.axis == "localisation") CHECK(row.rank == 1.5);

  CHECK_THROWS_AS(radar_ranking({good}), Error);
}
