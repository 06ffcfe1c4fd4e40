// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xaiens/classifier.hpp"
#include "xaiens/explainers.hpp"

namespace xaiens::quality {

struct Axis {
  std::string name;
  bool higher_better;
};

/// The five evaluation axes in radar order.
const std::vector<Axis>& axes();

struct QualityScores {
  std::string method;
  double localisation = 0.0;   // pointing game hit rate, higher better
  double faithfulness = 0.0;   // pixel-flipping degradation, higher better
  double robustness = 0.0;     // local Lipschitz estimate, lower better
  double complexity = 0.0;     // Gini sparseness, higher better
  double randomisation = 0.0;  // parameter-randomisation distance, higher better

  double axis_value(const std::string& axis) const;
};

enum class RandomisationMode { cascading, independent };

struct EvalConfig {
  double flip_step = 0.01;
  float flip_baseline = 0.f;
  double lipschitz_radius = 0.05;
  int lipschitz_samples = 10;
  float clip_min = -1.f;
  float clip_max = 1.f;
  RandomisationMode randomisation_mode = RandomisationMode::cascading;
  uint64_t seed = 0;

  void validate() const;
};

/// 1 if the first row-major argmax of the channel-mean |attr| lies inside
/// the mask. Errors on an empty mask (callers exclude those samples).
int pointing_game(const AttributionMap& attr, const Tensor& mask);

struct PointingGameBatch {
  int hits = 0;
  int counted = 0;
  int skipped_empty_mask = 0;
  double rate() const { return counted ? static_cast<double>(hits) / counted : 0.0; }
};

struct PixelFlippingResult {
  std::vector<double> curve;  // target softmax probability per flip step
  double faithfulness = 0.0;  // 1 - mean(curve)/curve[0]
};

/// Flips pixels to the baseline value in descending channel-mean |attr|
/// order (stable, row-major tie-break) in ceil(1/flip_step) chunks.
PixelFlippingResult pixel_flipping(Classifier& model, const Tensor& image,
                                   const AttributionMap& attr, int target,
                                   const EvalConfig& cfg);

using ExplainFn = std::function<Tensor(const Tensor& image)>;  // -> [3,H,W] values

/// max over sampled perturbations of ||e(x)-e(x')||_2 / ||x-x'||_2.
double local_lipschitz(const ExplainFn& explain_fn, const Tensor& image,
                       const EvalConfig& cfg);

/// Gini index of the flattened absolute attributions; all-zero input -> 0.
double sparseness_gini(const Tensor& values);

/// Spearman rank correlation with average ranks for ties.
double spearman_rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b);

using ModelExplainFn =
    std::function<Tensor(Classifier& model, const Tensor& image)>;

struct RandomisationResult {
  std::vector<std::pair<std::string, double>> per_layer;  // top-down order
  double score = 0.0;  // mean distance, higher = more weight-dependent
};

/// Randomizes layer parameters top-down (cascading keeps earlier
/// randomizations, independent resets the rest) and measures 1 - Spearman
/// between channel-mean |attr| before/after. The shared model is cloned,
/// never mutated.
RandomisationResult model_parameter_randomisation(const Classifier& model,
                                                  const ModelExplainFn& explain_fn,
                                                  const Tensor& image,
                                                  const EvalConfig& cfg);

struct RadarRow {
  std::string method;
  std::string axis;
  double raw_score = 0.0;
  bool higher_better = true;
  double rank = 0.0;  // higher rank value = better; ties share the average
};

/// Per-axis ranks over >= 2 methods; rank M = best, 1 = worst.
std::vector<RadarRow> radar_ranking(const std::vector<QualityScores>& scores);

}  // namespace xaiens::quality
