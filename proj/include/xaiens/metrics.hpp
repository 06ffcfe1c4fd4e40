// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "xaiens/tensor.hpp"

namespace xaiens::metrics {

struct Confusion {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    tn += other.tn;
    return *this;
  }
};

/// Pixelwise confusion counts between binary prediction and mask.
Confusion pixel_confusion(const std::vector<uint8_t>& pred_bin,
                          const std::vector<uint8_t>& mask);
/// Mask tensors in {0,1} convert through this.
std::vector<uint8_t> mask_to_binary(const Tensor& mask);

enum class EnsKind { iou, f1, acc };
EnsKind ens_kind_from_name(const std::string& name);

/// iou = TP/(TP+FP+FN); f1 = 2TP/(2TP+FP+FN); acc = (TP+TN)/total.
/// Empty-vs-empty convention: iou = f1 = 1.
double ens_metric(const Confusion& counts, EnsKind kind);
double ens_metric(const std::vector<uint8_t>& pred_bin,
                  const std::vector<uint8_t>& mask, EnsKind kind);

/// Eq.-style diverseness: 1 - train + valid.
double div_metric(double train_value, double valid_value);

/// Exhaustiveness ratio against the baseline0-trained pipeline's score.
/// Errors when baseline_value is zero.
double exh_metric(double ens_value, double baseline_value);

struct MetricReport {
  double ens_acc = 0.0;
  double ens_f1 = 0.0;
  double ens_iou = 0.0;
  double loss = 0.0;
  std::string split;
};

struct DerivedMetrics {
  double div_acc = 0.0;
  double div_f1 = 0.0;
  double div_iou = 0.0;
  double exh_iou = std::numeric_limits<double>::quiet_NaN();
};

DerivedMetrics derive_metrics(const MetricReport& train, const MetricReport& valid,
                              double baseline_iou = 0.0 /* 0 = unavailable */);

}  // namespace xaiens::metrics
