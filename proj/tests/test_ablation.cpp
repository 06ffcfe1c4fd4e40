// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "xaiens/ablation.hpp"

using namespace xaiens;
using namespace xaiens::ablation;

namespace {

struct Fixture {
  Dataset dataset;
  std::map<std::string, ExplanationSet> sets;
  std::unique_ptr<ensembler::EnsemblerModel> model;

  explicit Fixture(int p, bool zero_slot1 = false) {
    Rng rng(71);
    const int side = 32;
    for (int i = 0; i < 6; ++i) {
      ImageSample s;
      s.id = "a" + std::to_string(i);
      s.image = Tensor({3, side, side});
      s.mask = Tensor({side, side});
      for (auto& v : s.mask.vec()) v = rng.bernoulli(0.3) ? 1.f : 0.f;
      s.split = i < 4 ? Split::train : Split::test;
      dataset.samples.push_back(std::move(s));

      ExplanationSet set;
      set.image_id = "a" + std::to_string(i);
      set.preset = "custom";
      for (int j = 0; j < p; ++j) {
        AttributionMap m;
        m.method = "method" + std::to_string(j);
        m.range = ValueRange::signed_unit;
        m.values = Tensor({3, side, side});
        if (!(zero_slot1 && j == 1))
          for (auto& v : m.values.vec()) v = rng.uniformf(-1.f, 1.f);
        set.maps.push_back(std::move(m));
      }
      sets.emplace(set.image_id, std::move(set));
    }
    ensembler::EnsemblerConfig cfg;
    cfg.fusion = ensembler::FusionMode::concat;
    cfg.p = p;
    cfg.width_scale = 0.1;
    cfg.input_side = side;
    model = std::make_unique<ensembler::EnsemblerModel>(cfg, 5);
  }

  training::SetLookup lookup() const {
    return [this](const std::string& id) -> const ExplanationSet& {
      return sets.at(id);
    };
  }
};

}  // namespace

TEST_CASE("ablation bookkeeping identities") {
  Fixture fx(3);
  const AblationReport report =
      ablate(*fx.model, fx.lookup(), fx.dataset, Split::test);

  CHECK(report.rows.size() == 3);
  CHECK(report.split == "test");

  for (const auto& row : report.rows) {
    // diff + ablated = full to 1e-12 per metric.
    CHECK(std::fabs(row.diff_acc + row.ablated.ens_acc - report.baseline.ens_acc) <
          1e-12);
    CHECK(std::fabs(row.diff_f1 + row.ablated.ens_f1 - report.baseline.ens_f1) <
          1e-12);
    CHECK(std::fabs(row.diff_iou + row.ablated.ens_iou - report.baseline.ens_iou) <
          1e-12);
    // quot * full = ablated to 1e-9 when defined.
    if (!std::isnan(row.quot_iou))
      CHECK(std::fabs(row.quot_iou * report.baseline.ens_iou - row.ablated.ens_iou) <
            1e-9);
    // full = diff / (1 - quot) whenever quot != 1.
    if (!std::isnan(row.quot_acc) && std::fabs(1.0 - row.quot_acc) > 1e-12)
      CHECK(std::fabs(row.diff_acc / (1.0 - row.quot_acc) - report.baseline.ens_acc) <
            1e-9);
  }

  // Rows sorted by diff_iou descending.
  for (size_t i = 1; i < report.rows.size(); ++i)
    CHECK(report.rows[i - 1].diff_iou >= report.rows[i].diff_iou);
}

TEST_CASE("disabling an always-zero input changes nothing") {
  Fixture fx(3, /*zero_slot1=*/true);
  const AblationReport report =
      ablate(*fx.model, fx.lookup(), fx.dataset, Split::test);

  bool found = false;
  for (const auto& row : report.rows) {
    if (row.method == "method1") {
      found = true;
      CHECK(row.diff_acc == 0.0);
      CHECK(row.diff_f1 == 0.0);
      CHECK(row.diff_iou == 0.0);
      CHECK(row.quot_acc == 1.0);
      CHECK(row.quot_f1 == 1.0);
      CHECK(row.quot_iou == 1.0);
    }
  }
  CHECK(found);
}

TEST_CASE("ablation is non-destructive") {
  Fixture fx(2);
  const std::string digest_before = fx.model->digest();
  std::map<std::string, std::vector<float>> values_before;
  for (const auto& [id, set] : fx.sets)
    for (const auto& m : set.maps)
      values_before[id + m.method] = m.values.vec();

  (void)ablate(*fx.model, fx.lookup(), fx.dataset, Split::test);

  CHECK(fx.model->digest() == digest_before);
  for (const auto& [id, set] : fx.sets)
    for (const auto& m : set.maps)
      CHECK(values_before.at(id + m.method) == m.values.vec());
}

TEST_CASE("ablation requires at least two inputs") {
  Fixture fx(1);
  CHECK_THROWS_AS(ablate(*fx.model, fx.lookup(), fx.dataset, Split::test), Error);
}
