// SPDX-License-Identifier: Apache-2.0
#include "xaiens/metrics.hpp"

#include <limits>

namespace xaiens::metrics {

Confusion pixel_confusion(const std::vector<uint8_t>& pred_bin,
                          const std::vector<uint8_t>& mask) {
  require(pred_bin.size() == mask.size(), ErrorCode::invalid_argument,
          "pixel_confusion: shape mismatch");
  Confusion c;
  for (size_t i = 0; i < pred_bin.size(); ++i) {
    const bool p = pred_bin[i] != 0;
    const bool m = mask[i] != 0;
    if (p && m)
      ++c.tp;
    else if (p && !m)
      ++c.fp;
    else if (!p && m)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

std::vector<uint8_t> mask_to_binary(const Tensor& mask) {
  std::vector<uint8_t> out(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] > 0.f ? 1 : 0;
  return out;
}

EnsKind ens_kind_from_name(const std::string& name) {
  if (name == "iou") return EnsKind::iou;
  if (name == "f1") return EnsKind::f1;
  if (name == "acc") return EnsKind::acc;
  fail(ErrorCode::invalid_argument, "unknown ens metric kind: " + name);
}

double ens_metric(const Confusion& c, EnsKind kind) {
  switch (kind) {
    case EnsKind::iou: {
      const uint64_t denom = c.tp + c.fp + c.fn;
      if (denom == 0) return 1.0;  // empty prediction vs empty mask
      return static_cast<double>(c.tp) / static_cast<double>(denom);
    }
    case EnsKind::f1: {
      const uint64_t denom = 2 * c.tp + c.fp + c.fn;
      if (denom == 0) return 1.0;
      return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
    }
    case EnsKind::acc:
      return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  }
  return 0.0;
}

double ens_metric(const std::vector<uint8_t>& pred_bin,
                  const std::vector<uint8_t>& mask, EnsKind kind) {
  return ens_metric(pixel_confusion(pred_bin, mask), kind);
}

double div_metric(double train_value, double valid_value) {
  return 1.0 - train_value + valid_value;
}

double exh_metric(double ens_value, double baseline_value) {
  require(baseline_value > 0.0, ErrorCode::invalid_argument,
          "exh metric: baseline performance is zero (undefined baseline)");
  return ens_value / baseline_value;
}

DerivedMetrics derive_metrics(const MetricReport& train, const MetricReport& valid,
                              double baseline_iou) {
  DerivedMetrics d;
  d.div_acc = div_metric(train.ens_acc, valid.ens_acc);
  d.div_f1 = div_metric(train.ens_f1, valid.ens_f1);
  d.div_iou = div_metric(train.ens_iou, valid.ens_iou);
  if (baseline_iou > 0.0) d.exh_iou = exh_metric(valid.ens_iou, baseline_iou);
  return d;
}

}  // namespace xaiens::metrics
