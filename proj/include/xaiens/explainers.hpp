// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xaiens/classifier.hpp"
#include "xaiens/tensor.hpp"

namespace xaiens {

enum class ValueRange { signed_unit, unsigned_unit };  // [-1,1] vs [0,1]

struct AttributionMap {
  std::string method;
  Tensor values;  // [3, H, W]
  ValueRange range = ValueRange::signed_unit;

  /// Channel-mean of absolute values, [H, W].
  Tensor channel_mean_abs() const;
};

struct ExplanationSet {
  std::string image_id;
  std::vector<AttributionMap> maps;
  std::string preset;

  int p() const { return static_cast<int>(maps.size()); }
};

namespace explainers {

struct ExplainConfig {
  int ig_steps = 32;
  int nt_samples = 20;
  double nt_sigma_scale = 0.1;  // sigma = scale * (max - min) of the input
  int gshap_samples = 20;
  double gshap_blur_sigma = 2.0;
  int occlusion_window = 8;
  int occlusion_stride = 4;
  float fill_value = 0.f;  // occlusion / lime / shapley masked-out value
  int lime_samples = 200;
  double lime_ridge_lambda = 0.01;
  int grid_cells = 8;  // superpixel grid is grid_cells x grid_cells
  int shapley_permutations = 25;
  int forward_batch = 32;
  uint64_t seed = 0;

  std::string digest() const;
};

const std::vector<std::string>& known_methods();
bool is_region_method(const std::string& method);
ValueRange method_range(const std::string& method);

/// Raw (pre-normalization) attribution for one method. image is the
/// preprocessed [3,H,W] tensor exactly as fed to the classifier.
Tensor explain_raw(Classifier& model, const Tensor& image, int target,
                   const std::string& method, const ExplainConfig& cfg);

/// Scales raw attributions into their declared range: signed maps divide by
/// max |v| (all-zero stays zero); unsigned maps min-max scale (constant
/// input maps to zero).
AttributionMap normalize_attribution(const Tensor& raw, ValueRange range,
                                     const std::string& method);

AttributionMap explain(Classifier& model, const Tensor& image, int target,
                       const std::string& method, const ExplainConfig& cfg);

// Explanation-set presets.
inline constexpr const char* kPresetBaseline0 = "baseline0";
inline constexpr const char* kPresetLocal3 = "local3";
inline constexpr const char* kPresetCited4 = "cited4";
inline constexpr const char* kPresetDiverse7 = "diverse7";

std::vector<std::string> preset_methods(const std::string& preset);

/// Builds the ordered explanation set for a sample. The image must already
/// be preprocessed (normalized) like a classifier input.
ExplanationSet build_explanation_set(Classifier& model, const std::string& image_id,
                                     const Tensor& image, int target,
                                     const std::string& preset,
                                     const ExplainConfig& cfg);

// On-disk cache:
//   <root>/<model-digest>/<preset>/<image-id>.<method>.arr
// Array file headers carry (method, shape, value_range, config digest,
// model digest) and are the stale-check authority.
class ExplanationCache {
 public:
  ExplanationCache(std::filesystem::path root, std::string model_digest,
                   std::string preset, const ExplainConfig& cfg);

  std::filesystem::path path_for(const std::string& image_id,
                                 const std::string& method) const;
  bool contains(const std::string& image_id, const std::string& method) const;
  void store(const std::string& image_id, const AttributionMap& map) const;
  AttributionMap load(const std::string& image_id, const std::string& method) const;
  ExplanationSet load_set(const std::string& image_id) const;

  const std::string& model_digest() const { return model_digest_; }

 private:
  std::filesystem::path root_;
  std::string model_digest_;
  std::string preset_;
  std::string cfg_digest_;
};

}  // namespace explainers
}  // namespace xaiens
