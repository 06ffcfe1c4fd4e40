// SPDX-License-Identifier: Apache-2.0
#include "xaiens/explainers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaiens/checkpoint.hpp"
#include "xaiens/image.hpp"

namespace xaiens {

Tensor AttributionMap::channel_mean_abs() const {
  const int H = values.dim(1), W = values.dim(2);
  Tensor out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float acc = 0.f;
      for (int c = 0; c < 3; ++c) acc += std::fabs(values.at(c, y, x));
      out.at(y, x) = acc / 3.f;
    }
  return out;
}

namespace explainers {

namespace {

const char* kMethods[] = {
    "IntegratedGradients", "GradientShap",  "GuidedBackprop",
    "GuidedGradCAM",       "Lime",          "Occlusion",
    "ShapleyValueSampling", "NoiseTunnel",  "OriginalImage",
};

struct GridCells {
  int cells;       // per side
  int h, w;
  int row_of(int y) const { return std::min(cells - 1, y * cells / h); }
  int col_of(int x) const { return std::min(cells - 1, x * cells / w); }
  int cell_of(int y, int x) const { return row_of(y) * cells + col_of(x); }
  int count() const { return cells * cells; }
};

/// Target scores for a list of single images, forwarded in batches.
std::vector<double> target_scores(Classifier& model, const std::vector<Tensor>& images,
                                  int target, int batch) {
  std::vector<double> out(images.size());
  const size_t n = images.size();
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch)) {
    const size_t end = std::min(n, start + static_cast<size_t>(batch));
    const int B = static_cast<int>(end - start);
    const auto& first = images[start];
    Tensor big({B, first.dim(0), first.dim(1), first.dim(2)});
    for (int b = 0; b < B; ++b)
      std::copy(images[start + static_cast<size_t>(b)].data(),
                images[start + static_cast<size_t>(b)].data() + first.size(),
                big.data() + static_cast<size_t>(b) * first.size());
    const Tensor scores = model.forward(big);
    for (int b = 0; b < B; ++b) out[start + static_cast<size_t>(b)] = scores.at(b, target);
  }
  return out;
}

Tensor batch_of(const std::vector<Tensor>& images, size_t start, size_t end) {
  const auto& first = images[start];
  Tensor big({static_cast<int>(end - start), first.dim(0), first.dim(1), first.dim(2)});
  for (size_t i = start; i < end; ++i)
    std::copy(images[i].data(), images[i].data() + first.size(),
              big.data() + (i - start) * first.size());
  return big;
}

Tensor integrated_gradients(Classifier& model, const Tensor& image, int target,
                            const ExplainConfig& cfg) {
  const int steps = cfg.ig_steps;
  std::vector<Tensor> points;
  points.reserve(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const float alpha = (static_cast<float>(k) + 0.5f) / static_cast<float>(steps);
    Tensor p = image;
    for (auto& v : p.vec()) v *= alpha;  // zero baseline
    points.push_back(std::move(p));
  }
  std::vector<double> avg(image.size(), 0.0);
  for (size_t start = 0; start < points.size();
       start += static_cast<size_t>(cfg.forward_batch)) {
    const size_t end = std::min(points.size(), start + static_cast<size_t>(cfg.forward_batch));
    const Tensor grads = model.input_gradients(batch_of(points, start, end), target, false);
    const size_t each = image.size();
    for (size_t b = 0; b < end - start; ++b)
      for (size_t i = 0; i < each; ++i) avg[i] += grads[b * each + i];
  }
  Tensor out = image;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(avg[i] / steps * image[i]);
  return out;
}

Tensor gradient_shap(Classifier& model, const Tensor& image, int target,
                     const ExplainConfig& cfg, Rng& rng) {
  const Tensor blurred = img::gaussian_blur_chw(image, cfg.gshap_blur_sigma);
  std::vector<Tensor> points;
  std::vector<Tensor> diffs;  // x - baseline per sample
  for (int s = 0; s < cfg.gshap_samples; ++s) {
    const bool use_blur = rng.bernoulli(0.5);
    const float alpha = rng.uniformf(0.f, 1.f);
    Tensor p = image;
    Tensor d = image;
    for (size_t i = 0; i < p.size(); ++i) {
      const float base = use_blur ? blurred[i] : 0.f;
      d[i] = image[i] - base;
      p[i] = base + alpha * d[i];
    }
    points.push_back(std::move(p));
    diffs.push_back(std::move(d));
  }
  std::vector<double> acc(image.size(), 0.0);
  for (size_t start = 0; start < points.size();
       start += static_cast<size_t>(cfg.forward_batch)) {
    const size_t end = std::min(points.size(), start + static_cast<size_t>(cfg.forward_batch));
    const Tensor grads = model.input_gradients(batch_of(points, start, end), target, false);
    const size_t each = image.size();
    for (size_t b = 0; b < end - start; ++b)
      for (size_t i = 0; i < each; ++i)
        acc[i] += static_cast<double>(grads[b * each + i]) * diffs[start + b][i];
  }
  Tensor out = image;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(acc[i] / cfg.gshap_samples);
  return out;
}

// SmoothGrad over saliency: mean absolute input gradient under input noise.
Tensor noise_tunnel(Classifier& model, const Tensor& image, int target,
                    const ExplainConfig& cfg, Rng& rng) {
  const double sigma =
      cfg.nt_sigma_scale * (static_cast<double>(image.max_value()) - image.min_value());
  std::vector<Tensor> points;
  for (int s = 0; s < cfg.nt_samples; ++s) {
    Tensor p = image;
    for (auto& v : p.vec()) v += static_cast<float>(rng.normal(0.0, sigma));
    points.push_back(std::move(p));
  }
  std::vector<double> acc(image.size(), 0.0);
  for (size_t start = 0; start < points.size();
       start += static_cast<size_t>(cfg.forward_batch)) {
    const size_t end = std::min(points.size(), start + static_cast<size_t>(cfg.forward_batch));
    const Tensor grads = model.input_gradients(batch_of(points, start, end), target, false);
    const size_t each = image.size();
    for (size_t b = 0; b < end - start; ++b)
      for (size_t i = 0; i < each; ++i) acc[i] += std::fabs(grads[b * each + i]);
  }
  Tensor out = image;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(acc[i] / cfg.nt_samples);
  return out;
}

Tensor guided_backprop(Classifier& model, const Tensor& image, int target) {
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), batch.data());
  const Tensor grads = model.input_gradients(batch, target, true);
  Tensor out = image;
  std::copy(grads.data(), grads.data() + out.size(), out.data());
  return out;
}

Tensor guided_gradcam(Classifier& model, const Tensor& image, int target) {
  Tensor acts, grads;
  require(model.gradcam(image, target, acts, grads), ErrorCode::invalid_argument,
          "GuidedGradCAM requires a model with a convolutional feature map");
  const int C = acts.dim(0), h = acts.dim(1), w = acts.dim(2);
  Tensor cam_small({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) {
        double alpha = 0.0;
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) alpha += grads.at(c, yy, xx);
        alpha /= (h * w);
        acc += alpha * acts.at(c, y, x);
      }
      cam_small.at(0, 0, y, x) = static_cast<float>(std::max(0.0, acc));
    }
  nn::Var up = nn::upsample_bilinear(nn::Var(cam_small), image.dim(1), image.dim(2));
  Tensor cam = up.value();
  const float cam_max = cam.max_value();
  if (cam_max > 0.f)
    for (auto& v : cam.vec()) v /= cam_max;

  const Tensor gbp = guided_backprop(model, image, target);
  Tensor out = image;
  const int H = image.dim(1), W = image.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.at(c, y, x) = gbp.at(c, y, x) * cam[static_cast<size_t>(y) * W + x];
  return out;
}

Tensor occlusion(Classifier& model, const Tensor& image, int target,
                 const ExplainConfig& cfg) {
  const int H = image.dim(1), W = image.dim(2);
  const int win = cfg.occlusion_window;
  const int stride = cfg.occlusion_stride;
  require(win > 0 && win <= H && win <= W, ErrorCode::invalid_argument,
          "occlusion window must fit in the image");
  require(stride > 0, ErrorCode::invalid_argument, "occlusion stride must be positive");

  std::vector<int> ys, xs;
  for (int y = 0; y + win <= H; y += stride) ys.push_back(y);
  if (ys.empty() || ys.back() != H - win) ys.push_back(H - win);
  for (int x = 0; x + win <= W; x += stride) xs.push_back(x);
  if (xs.empty() || xs.back() != W - win) xs.push_back(W - win);

  std::vector<Tensor> variants;
  variants.reserve(ys.size() * xs.size() + 1);
  variants.push_back(image);
  for (int y0 : ys)
    for (int x0 : xs) {
      Tensor occluded = image;
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + win; ++y)
          for (int x = x0; x < x0 + win; ++x)
            occluded.at(c, y, x) = cfg.fill_value;
      variants.push_back(std::move(occluded));
    }
  const auto scores = target_scores(model, variants, target, cfg.forward_batch);
  const double base = scores[0];

  std::vector<double> acc(static_cast<size_t>(H) * W, 0.0);
  std::vector<int> count(static_cast<size_t>(H) * W, 0);
  size_t vi = 1;
  for (int y0 : ys)
    for (int x0 : xs) {
      const double drop = base - scores[vi++];
      for (int y = y0; y < y0 + win; ++y)
        for (int x = x0; x < x0 + win; ++x) {
          acc[static_cast<size_t>(y) * W + x] += drop;
          count[static_cast<size_t>(y) * W + x] += 1;
        }
    }
  Tensor out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const size_t i = static_cast<size_t>(y) * W + x;
      const float v = count[i] > 0 ? static_cast<float>(acc[i] / count[i]) : 0.f;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = v;
    }
  return out;
}

Tensor lime(Classifier& model, const Tensor& image, int target,
            const ExplainConfig& cfg, Rng& rng) {
  const int H = image.dim(1), W = image.dim(2);
  const GridCells grid{cfg.grid_cells, H, W};
  const int F = grid.count();
  const int S = cfg.lime_samples;

  std::vector<std::vector<uint8_t>> zs(static_cast<size_t>(S));
  std::vector<Tensor> variants;
  variants.reserve(static_cast<size_t>(S));
  for (int s = 0; s < S; ++s) {
    auto& z = zs[static_cast<size_t>(s)];
    z.resize(static_cast<size_t>(F));
    for (auto& b : z) b = rng.bernoulli(0.5) ? 1 : 0;
    Tensor v = image;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (!z[static_cast<size_t>(grid.cell_of(y, x))])
          for (int c = 0; c < 3; ++c) v.at(c, y, x) = cfg.fill_value;
    variants.push_back(std::move(v));
  }
  const auto scores = target_scores(model, variants, target, cfg.forward_batch);

  // Ridge regression with an unpenalized intercept.
  Eigen::MatrixXd A(S, F + 1);
  Eigen::VectorXd y(S);
  for (int s = 0; s < S; ++s) {
    A(s, 0) = 1.0;
    for (int f = 0; f < F; ++f) A(s, f + 1) = zs[static_cast<size_t>(s)][static_cast<size_t>(f)];
    y(s) = scores[static_cast<size_t>(s)];
  }
  Eigen::MatrixXd gram = A.transpose() * A;
  for (int f = 1; f <= F; ++f) gram(f, f) += cfg.lime_ridge_lambda;
  const Eigen::VectorXd theta = gram.ldlt().solve(A.transpose() * y);

  Tensor out({3, H, W});
  for (int y2 = 0; y2 < H; ++y2)
    for (int x = 0; x < W; ++x) {
      const auto v = static_cast<float>(theta(grid.cell_of(y2, x) + 1));
      for (int c = 0; c < 3; ++c) out.at(c, y2, x) = v;
    }
  return out;
}

Tensor shapley_value_sampling(Classifier& model, const Tensor& image, int target,
                              const ExplainConfig& cfg, Rng& rng) {
  const int H = image.dim(1), W = image.dim(2);
  const GridCells grid{cfg.grid_cells, H, W};
  const int F = grid.count();

  Tensor baseline = image;
  for (auto& v : baseline.vec()) v = cfg.fill_value;

  std::vector<double> marginal(static_cast<size_t>(F), 0.0);
  std::vector<int> perm(static_cast<size_t>(F));
  for (int p = 0; p < cfg.shapley_permutations; ++p) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    // Cumulative reveals along the permutation; all F+1 coalition images are
    // known up front, so they forward in batches.
    std::vector<Tensor> coalition(static_cast<size_t>(F) + 1);
    coalition[0] = baseline;
    Tensor cur = baseline;
    for (int f = 0; f < F; ++f) {
      const int cell = perm[static_cast<size_t>(f)];
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (grid.cell_of(y, x) == cell)
            for (int c = 0; c < 3; ++c) cur.at(c, y, x) = image.at(c, y, x);
      coalition[static_cast<size_t>(f) + 1] = cur;
    }
    const auto scores = target_scores(model, coalition, target, cfg.forward_batch);
    for (int f = 0; f < F; ++f)
      marginal[static_cast<size_t>(perm[static_cast<size_t>(f)])] +=
          scores[static_cast<size_t>(f) + 1] - scores[static_cast<size_t>(f)];
  }

  Tensor out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto v = static_cast<float>(marginal[static_cast<size_t>(grid.cell_of(y, x))] /
                                        cfg.shapley_permutations);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = v;
    }
  return out;
}

}  // namespace

std::string ExplainConfig::digest() const {
  std::string s;
  s += "ig_steps=" + std::to_string(ig_steps);
  s += ";nt=" + std::to_string(nt_samples) + "," + format_double(nt_sigma_scale);
  s += ";gshap=" + std::to_string(gshap_samples) + "," + format_double(gshap_blur_sigma);
  s += ";occ=" + std::to_string(occlusion_window) + "," + std::to_string(occlusion_stride);
  s += ";fill=" + format_double(fill_value);
  s += ";lime=" + std::to_string(lime_samples) + "," + format_double(lime_ridge_lambda);
  s += ";grid=" + std::to_string(grid_cells);
  s += ";shap=" + std::to_string(shapley_permutations);
  s += ";seed=" + std::to_string(seed);
  return hex64(fnv1a64(s));
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods(std::begin(kMethods), std::end(kMethods));
  return methods;
}

bool is_region_method(const std::string& method) {
  return method == "Occlusion" || method == "Lime" || method == "ShapleyValueSampling";
}

ValueRange method_range(const std::string& method) {
  if (method == "NoiseTunnel" || method == "OriginalImage")
    return ValueRange::unsigned_unit;
  return ValueRange::signed_unit;
}

Tensor explain_raw(Classifier& model, const Tensor& image, int target,
                   const std::string& method, const ExplainConfig& cfg) {
  require(image.ndim() == 3 && image.dim(0) == 3, ErrorCode::invalid_argument,
          "explain: image must be [3,H,W]");
  require(target >= 0 && target < model.num_classes(), ErrorCode::invalid_argument,
          "explain: target class out of range");
  Rng rng(derive_seed(cfg.seed, {"explain", method}));

  if (method == "IntegratedGradients") return integrated_gradients(model, image, target, cfg);
  if (method == "GradientShap") return gradient_shap(model, image, target, cfg, rng);
  if (method == "NoiseTunnel") return noise_tunnel(model, image, target, cfg, rng);
  if (method == "GuidedBackprop") return guided_backprop(model, image, target);
  if (method == "GuidedGradCAM") return guided_gradcam(model, image, target);
  if (method == "Occlusion") return occlusion(model, image, target, cfg);
  if (method == "Lime") return lime(model, image, target, cfg, rng);
  if (method == "ShapleyValueSampling")
    return shapley_value_sampling(model, image, target, cfg, rng);
  if (method == "OriginalImage") return image;
  fail(ErrorCode::invalid_argument, "unknown explanation method: " + method);
}

AttributionMap normalize_attribution(const Tensor& raw, ValueRange range,
                                     const std::string& method) {
  require(raw.all_finite(), ErrorCode::invalid_argument,
          "attribution contains NaN/Inf");
  AttributionMap map;
  map.method = method;
  map.range = range;
  map.values = raw;
  if (range == ValueRange::signed_unit) {
    const float m = raw.abs_max();
    if (m > 0.f)
      for (auto& v : map.values.vec()) v /= m;
  } else {
    const float mn = raw.min_value();
    const float mx = raw.max_value();
    if (mx > mn) {
      for (auto& v : map.values.vec()) v = (v - mn) / (mx - mn);
    } else {
      map.values.fill(0.f);
    }
  }
  return map;
}

AttributionMap explain(Classifier& model, const Tensor& image, int target,
                       const std::string& method, const ExplainConfig& cfg) {
  return normalize_attribution(explain_raw(model, image, target, method, cfg),
                               method_range(method), method);
}

std::vector<std::string> preset_methods(const std::string& preset) {
  if (preset == kPresetBaseline0) return {"OriginalImage"};
  if (preset == kPresetLocal3)
    return {"ShapleyValueSampling", "NoiseTunnel", "GuidedBackprop"};
  if (preset == kPresetCited4)
    return {"GradientShap", "Lime", "Occlusion", "GuidedGradCAM"};
  if (preset == kPresetDiverse7)
    return {"IntegratedGradients", "GradientShap",  "GuidedBackprop",
            "GuidedGradCAM",       "Lime",          "Occlusion",
            "ShapleyValueSampling"};
  fail(ErrorCode::invalid_argument, "unknown preset: " + preset);
}

ExplanationSet build_explanation_set(Classifier& model, const std::string& image_id,
                                     const Tensor& image, int target,
                                     const std::string& preset,
                                     const ExplainConfig& cfg) {
  const auto methods = preset_methods(preset);
  require(!methods.empty(), ErrorCode::invalid_argument, "empty method list");
  ExplanationSet set;
  set.image_id = image_id;
  set.preset = preset;
  for (const auto& m : methods) set.maps.push_back(explain(model, image, target, m, cfg));
  return set;
}

// ---------------------------------------------------------------------------
// cache
// ---------------------------------------------------------------------------

ExplanationCache::ExplanationCache(std::filesystem::path root, std::string model_digest,
                                   std::string preset, const ExplainConfig& cfg)
    : root_(std::move(root)),
      model_digest_(std::move(model_digest)),
      preset_(std::move(preset)),
      cfg_digest_(cfg.digest()) {}

std::filesystem::path ExplanationCache::path_for(const std::string& image_id,
                                                 const std::string& method) const {
  return root_ / model_digest_ / preset_ / (image_id + "." + method + ".arr");
}

bool ExplanationCache::contains(const std::string& image_id,
                                const std::string& method) const {
  return std::filesystem::exists(path_for(image_id, method));
}

void ExplanationCache::store(const std::string& image_id,
                             const AttributionMap& map) const {
  nlohmann::json meta;
  meta["method"] = map.method;
  meta["image_id"] = image_id;
  meta["shape"] = map.values.dims();
  meta["value_range"] =
      map.range == ValueRange::signed_unit ? "signed" : "unsigned";
  meta["config_digest"] = cfg_digest_;
  meta["model_digest"] = model_digest_;
  ckpt::write_file(path_for(image_id, map.method),
                   ckpt::blob_to_bytes(meta, {{"values", &map.values}}));
}

AttributionMap ExplanationCache::load(const std::string& image_id,
                                      const std::string& method) const {
  const auto path = path_for(image_id, method);
  require(std::filesystem::exists(path), ErrorCode::not_found,
          "explanation not cached: " + path.string());
  auto blob = ckpt::blob_from_bytes(ckpt::read_file(path), path.string());
  // The header is the stale-check authority.
  require(blob.meta.value("config_digest", "") == cfg_digest_,
          ErrorCode::stale_cache, "stale cache (config changed): " + path.string());
  require(blob.meta.value("model_digest", "") == model_digest_,
          ErrorCode::stale_cache, "stale cache (model changed): " + path.string());
  require(blob.meta.value("method", "") == method, ErrorCode::stale_cache,
          "stale cache (method mismatch): " + path.string());
  AttributionMap map;
  map.method = method;
  map.range = blob.meta.value("value_range", "signed") == std::string("signed")
                  ? ValueRange::signed_unit
                  : ValueRange::unsigned_unit;
  map.values = blob.array("values");
  return map;
}

ExplanationSet ExplanationCache::load_set(const std::string& image_id) const {
  ExplanationSet set;
  set.image_id = image_id;
  set.preset = preset_;
  for (const auto& m : preset_methods(preset_)) set.maps.push_back(load(image_id, m));
  return set;
}

}  // namespace explainers
}  // namespace xaiens
