// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "xaiens/training.hpp"

namespace xaiens::ablation {

struct AblationRow {
  std::string method;
  double diff_acc = 0.0, diff_f1 = 0.0, diff_iou = 0.0;
  // Quotients are NaN when the corresponding full-model metric is zero.
  double quot_acc = 0.0, quot_f1 = 0.0, quot_iou = 0.0;
  metrics::MetricReport ablated;
};

struct AblationReport {
  metrics::MetricReport baseline;  // full model
  std::vector<AblationRow> rows;   // sorted by diff_iou descending
  std::string split;
};

/// Disables each input explanation in turn (attribution values set to zero)
/// and reports difference and quotient against the full model. Inference
/// only; the model and cached sets are left untouched.
AblationReport ablate(ensembler::EnsemblerModel& model,
                      const training::SetLookup& sets, const Dataset& dataset,
                      Split split, double smoothing = 1.0);

}  // namespace xaiens::ablation
