// SPDX-License-Identifier: Apache-2.0
#include "xaiens/quality.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace xaiens::quality {

const std::vector<Axis>& axes() {
  static const std::vector<Axis> kAxes = {
      {"localisation", true},  {"faithfulness", true}, {"robustness", false},
      {"complexity", true},    {"randomisation", true},
  };
  return kAxes;
}

double QualityScores::axis_value(const std::string& axis) const {
  if (axis == "localisation") return localisation;
  if (axis == "faithfulness") return faithfulness;
  if (axis == "robustness") return robustness;
  if (axis == "complexity") return complexity;
  if (axis == "randomisation") return randomisation;
  fail(ErrorCode::invalid_argument, "unknown axis: " + axis);
}

void EvalConfig::validate() const {
  require(flip_step > 0.0 && flip_step <= 1.0, ErrorCode::invalid_argument,
          "flip_step must be in (0,1]");
  require(lipschitz_samples >= 1, ErrorCode::invalid_argument,
          "lipschitz_samples must be >= 1");
  require(lipschitz_radius > 0.0, ErrorCode::invalid_argument,
          "lipschitz_radius must be positive");
}

int pointing_game(const AttributionMap& attr, const Tensor& mask) {
  const Tensor reduced = attr.channel_mean_abs();
  require(reduced.same_shape(mask), ErrorCode::invalid_argument,
          "pointing_game: shape mismatch");
  bool mask_nonempty = false;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.f) {
      mask_nonempty = true;
      break;
    }
  require(mask_nonempty, ErrorCode::invalid_argument,
          "pointing_game: empty mask (sample must be excluded)");
  // First row-major argmax is the tie rule.
  size_t best = 0;
  for (size_t i = 1; i < reduced.size(); ++i)
    if (reduced[i] > reduced[best]) best = i;
  return mask[best] > 0.f ? 1 : 0;
}

PixelFlippingResult pixel_flipping(Classifier& model, const Tensor& image,
                                   const AttributionMap& attr, int target,
                                   const EvalConfig& cfg) {
  cfg.validate();
  require(image.ndim() == 3, ErrorCode::invalid_argument, "pixel_flipping: CHW image");
  const int H = image.dim(1), W = image.dim(2);
  require(attr.values.dim(1) == H && attr.values.dim(2) == W,
          ErrorCode::invalid_argument, "pixel_flipping: attribution shape mismatch");

  const Tensor reduced = attr.channel_mean_abs();
  std::vector<int> order(static_cast<size_t>(H) * W);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return reduced[static_cast<size_t>(a)] > reduced[static_cast<size_t>(b)];
  });

  const size_t hw = order.size();
  const int steps = static_cast<int>(std::ceil(1.0 / cfg.flip_step));
  std::vector<Tensor> variants;
  variants.reserve(static_cast<size_t>(steps) + 1);
  variants.push_back(image);
  Tensor cur = image;
  for (int k = 0; k < steps; ++k) {
    const size_t lo = hw * static_cast<size_t>(k) / static_cast<size_t>(steps);
    const size_t hi = hw * static_cast<size_t>(k + 1) / static_cast<size_t>(steps);
    for (size_t i = lo; i < hi; ++i) {
      const int y = order[i] / W, x = order[i] % W;
      for (int c = 0; c < 3; ++c) cur.at(c, y, x) = cfg.flip_baseline;
    }
    variants.push_back(cur);
  }

  PixelFlippingResult result;
  const int batch = 32;
  for (size_t start = 0; start < variants.size(); start += batch) {
    const size_t end = std::min(variants.size(), start + batch);
    Tensor big({static_cast<int>(end - start), 3, H, W});
    for (size_t i = start; i < end; ++i)
      std::copy(variants[i].data(), variants[i].data() + variants[i].size(),
                big.data() + (i - start) * variants[i].size());
    const Tensor scores = model.forward(big);
    for (size_t i = start; i < end; ++i)
      result.curve.push_back(softmax(scores, static_cast<int>(i - start))[
          static_cast<size_t>(target)]);
  }
  require(result.curve[0] > 0.0, ErrorCode::runtime,
          "pixel_flipping: degenerate zero initial score");
  double mean = 0.0;
  for (double v : result.curve) mean += v;
  mean /= static_cast<double>(result.curve.size());
  result.faithfulness = 1.0 - mean / result.curve[0];
  return result;
}

double local_lipschitz(const ExplainFn& explain_fn, const Tensor& image,
                       const EvalConfig& cfg) {
  cfg.validate();
  const Tensor base_attr = explain_fn(image);
  Rng rng(derive_seed(cfg.seed, {"lipschitz"}));
  double worst = 0.0;
  for (int s = 0; s < cfg.lipschitz_samples; ++s) {
    Tensor perturbed;
    bool distinct = false;
    for (int attempt = 0; attempt < 10 && !distinct; ++attempt) {
      perturbed = image;
      for (auto& v : perturbed.vec()) {
        v += static_cast<float>(rng.uniform(-cfg.lipschitz_radius, cfg.lipschitz_radius));
        v = std::clamp(v, cfg.clip_min, cfg.clip_max);
      }
      distinct = std::memcmp(perturbed.data(), image.data(),
                             image.size() * sizeof(float)) != 0;
    }
    require(distinct, ErrorCode::runtime,
            "local_lipschitz: perturbation collapsed to the input 10 times");
    const Tensor pert_attr = explain_fn(perturbed);
    const double num = l2_distance(base_attr, pert_attr);
    const double den = l2_distance(image, perturbed);
    worst = std::max(worst, num / den);
  }
  return worst;
}

double sparseness_gini(const Tensor& values) {
  std::vector<double> a(values.size());
  for (size_t i = 0; i < values.size(); ++i) a[i] = std::fabs(values[i]);
  std::sort(a.begin(), a.end());
  const auto n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a) total += v;
  if (total == 0.0) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    acc += (2.0 * (static_cast<double>(i) + 1.0) - n - 1.0) * a[i];
  return acc / (n * total);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::invalid_argument,
          "spearman: size mismatch");
  if (a == b) return 1.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;  // constant, non-identical sides
  return cov / std::sqrt(va * vb);
}

namespace {

std::vector<double> reduced_flat(const Tensor& values) {
  const int H = values.dim(1), W = values.dim(2);
  std::vector<double> out(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += std::fabs(values.at(c, y, x));
      out[static_cast<size_t>(y) * W + x] = acc / 3.0;
    }
  return out;
}

void randomize_layer(Classifier::LayerRef& layer, Rng& rng) {
  for (Tensor* t : layer.params) {
    // Zero-mean normal matching the original parameter spread.
    double mean = 0.0;
    for (float v : t->vec()) mean += v;
    mean /= static_cast<double>(t->size());
    double var = 0.0;
    for (float v : t->vec()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t->size());
    const double stddev = std::sqrt(var);
    for (auto& v : t->vec()) v = static_cast<float>(rng.normal(0.0, stddev));
  }
}

}  // namespace

RandomisationResult model_parameter_randomisation(const Classifier& model,
                                                  const ModelExplainFn& explain_fn,
                                                  const Tensor& image,
                                                  const EvalConfig& cfg) {
  auto probe = model.clone();
  auto layer_count = probe->layers().size();
  require(layer_count > 0, ErrorCode::invalid_argument,
          "parameter randomisation: model has no parameterized layers");

  Tensor base_attr = explain_fn(*probe, image);
  const auto base_reduced = reduced_flat(base_attr);

  RandomisationResult result;
  std::unique_ptr<Classifier> cascade;
  if (cfg.randomisation_mode == RandomisationMode::cascading) cascade = model.clone();

  // Top-down: the layer closest to the output first.
  for (size_t li = layer_count; li-- > 0;) {
    Classifier* subject = nullptr;
    std::unique_ptr<Classifier> independent;
    if (cfg.randomisation_mode == RandomisationMode::cascading) {
      subject = cascade.get();
    } else {
      independent = model.clone();
      subject = independent.get();
    }
    auto layers = subject->layers();
    Rng rng(derive_seed(cfg.seed, {"mpr", layers[li].name}));
    randomize_layer(layers[li], rng);

    const Tensor rand_attr = explain_fn(*subject, image);
    const double rho = spearman_rank_correlation(base_reduced, reduced_flat(rand_attr));
    result.per_layer.emplace_back(layers[li].name, 1.0 - rho);
  }
  double mean = 0.0;
  for (const auto& [name, d] : result.per_layer) mean += d;
  result.score = mean / static_cast<double>(result.per_layer.size());
  return result;
}

std::vector<RadarRow> radar_ranking(const std::vector<QualityScores>& scores) {
  require(scores.size() >= 2, ErrorCode::invalid_argument,
          "radar ranking needs at least 2 methods");
  std::vector<RadarRow> rows;
  for (const auto& axis : axes()) {
    std::vector<double> goodness;
    goodness.reserve(scores.size());
    for (const auto& s : scores) {
      const double v = s.axis_value(axis.name);
      goodness.push_back(axis.higher_better ? v : -v);
    }
    const auto ranks = average_ranks(goodness);  // 1 = worst ... M = best
    for (size_t i = 0; i < scores.size(); ++i) {
      RadarRow row;
      row.method = scores[i].method;
      row.axis = axis.name;
      row.raw_score = scores[i].axis_value(axis.name);
      row.higher_better = axis.higher_better;
      row.rank = ranks[i];
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace xaiens::quality
