// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xaiens/metrics.hpp"

using namespace xaiens;
using namespace xaiens::metrics;

namespace {

// Independent oracle: direct pixel enumeration and textbook ratios.
struct OracleCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

OracleCounts enumerate(const std::vector<uint8_t>& pred,
                       const std::vector<uint8_t>& mask) {
  OracleCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && mask[i]) ++c.tp;
    if (pred[i] && !mask[i]) ++c.fp;
    if (!pred[i] && mask[i]) ++c.fn;
    if (!pred[i] && !mask[i]) ++c.tn;
  }
  return c;
}

double oracle_metric(const OracleCounts& c, EnsKind kind) {
  switch (kind) {
    case EnsKind::iou:
      return (c.tp + c.fp + c.fn) == 0
                 ? 1.0
                 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
    case EnsKind::f1:
      return (2 * c.tp + c.fp + c.fn) == 0
                 ? 1.0
                 : static_cast<double>(2 * c.tp) /
                       static_cast<double>(2 * c.tp + c.fp + c.fn);
    case EnsKind::acc:
      return static_cast<double>(c.tp + c.tn) /
             static_cast<double>(c.tp + c.fp + c.fn + c.tn);
  }
  return 0.0;
}

}  // namespace

TEST_CASE("pixel confusion enumerated cases") {
  // pred=[[1,1],[0,0]], mask=[[1,0],[0,0]]
  const std::vector<uint8_t> pred = {1, 1, 0, 0};
  const std::vector<uint8_t> mask = {1, 0, 0, 0};
  const Confusion c = pixel_confusion(pred, mask);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 0);
  CHECK(c.tn == 2);
  CHECK(c.total() == 4);

  CHECK(ens_metric(c, EnsKind::iou) == 0.5);
  CHECK(ens_metric(c, EnsKind::f1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(ens_metric(c, EnsKind::acc) == 0.75);
}

TEST_CASE("perfect and inverted predictions") {
  const std::vector<uint8_t> mask = {1, 1, 0, 0, 1, 0};
  const Confusion same = pixel_confusion(mask, mask);
  CHECK(same.tp == 3);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  CHECK(ens_metric(same, EnsKind::iou) == 1.0);
  CHECK(ens_metric(same, EnsKind::f1) == 1.0);
  CHECK(ens_metric(same, EnsKind::acc) == 1.0);

  std::vector<uint8_t> inverted;
  for (uint8_t v : mask) inverted.push_back(v ? 0 : 1);
  const Confusion inv = pixel_confusion(inverted, mask);
  CHECK(inv.tp == 0);
  CHECK(inv.tn == 0);
}

TEST_CASE("empty-vs-empty convention") {
  const std::vector<uint8_t> zeros(16, 0);
  CHECK(ens_metric(zeros, zeros, EnsKind::iou) == 1.0);
  CHECK(ens_metric(zeros, zeros, EnsKind::f1) == 1.0);
  CHECK(ens_metric(zeros, zeros, EnsKind::acc) == 1.0);
}

TEST_CASE("ens metrics match the enumeration oracle on random masks") {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<uint8_t> pred(256), mask(256);
    const double dp = rng.uniform(0.0, 1.0), dm = rng.uniform(0.0, 1.0);
    for (size_t i = 0; i < pred.size(); ++i) {
      pred[i] = rng.bernoulli(dp) ? 1 : 0;
      mask[i] = rng.bernoulli(dm) ? 1 : 0;
    }
    const OracleCounts oc = enumerate(pred, mask);
    for (EnsKind kind : {EnsKind::iou, EnsKind::f1, EnsKind::acc})
      CHECK(ens_metric(pred, mask, kind) == oracle_metric(oc, kind));
  }
}

TEST_CASE("iou <= f1 whenever a positive appears anywhere") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<uint8_t> pred(64), mask(64);
    for (size_t i = 0; i < pred.size(); ++i) {
      pred[i] = rng.bernoulli(0.3) ? 1 : 0;
      mask[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    const Confusion c = pixel_confusion(pred, mask);
    if (c.tp + c.fp + c.fn == 0) continue;
    CHECK(ens_metric(c, EnsKind::iou) <= ens_metric(c, EnsKind::f1) + 1e-15);
  }
}

TEST_CASE("ens metrics invariant under simultaneous pixel permutation") {
  Rng rng(11);
  std::vector<uint8_t> pred(128), mask(128);
  for (size_t i = 0; i < pred.size(); ++i) {
    pred[i] = rng.bernoulli(0.4) ? 1 : 0;
    mask[i] = rng.bernoulli(0.4) ? 1 : 0;
  }
  std::vector<size_t> perm(pred.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<uint8_t> pred2(pred.size()), mask2(mask.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    pred2[i] = pred[perm[i]];
    mask2[i] = mask[perm[i]];
  }
  for (EnsKind kind : {EnsKind::iou, EnsKind::f1, EnsKind::acc})
    CHECK(ens_metric(pred, mask, kind) == ens_metric(pred2, mask2, kind));
}

TEST_CASE("div metric arithmetic") {
  CHECK(div_metric(0.5, 0.5) == 1.0);
  CHECK(div_metric(1.0, 0.0) == 0.0);
  // Table-1 derived check: concat IoU train 0.734, test 0.599.
  CHECK(std::fabs(div_metric(0.734, 0.599) - 0.865) < 1e-12);
  // div(a,b) + div(b,a) == 2 always.
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    CHECK(std::fabs(div_metric(a, b) + div_metric(b, a) - 2.0) < 1e-12);
  }
}

TEST_CASE("exh metric arithmetic and errors") {
  CHECK(exh_metric(0.6, 0.6) == 1.0);
  CHECK(std::fabs(exh_metric(0.3, 0.6) - 0.5) < 1e-12);
  CHECK_THROWS_AS(exh_metric(0.5, 0.0), Error);
}

TEST_CASE("derive_metrics wires div and exh") {
  MetricReport train{0.9, 0.8, 0.734, 0.1, "train"};
  MetricReport test{0.85, 0.72, 0.599, 0.2, "test"};
  const DerivedMetrics d = derive_metrics(train, test, 0.7);
  CHECK(std::fabs(d.div_iou - 0.865) < 1e-12);
  CHECK(std::fabs(d.exh_iou - 0.599 / 0.7) < 1e-12);
  const DerivedMetrics no_baseline = derive_metrics(train, test);
  CHECK(std::isnan(no_baseline.exh_iou));
}
