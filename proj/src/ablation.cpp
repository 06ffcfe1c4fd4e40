// SPDX-License-Identifier: Apache-2.0
#include "xaiens/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace xaiens::ablation {

namespace {
double quotient(double ablated, double full) {
  if (full == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return ablated / full;
}
}  // namespace

AblationReport ablate(ensembler::EnsemblerModel& model,
                      const training::SetLookup& sets, const Dataset& dataset,
                      Split split, double smoothing) {
  const int p = model.config().p;
  require(p >= 2, ErrorCode::invalid_argument,
          "ablation needs at least 2 input explanations");

  AblationReport report;
  report.split = split == Split::train ? "train" : "test";
  report.baseline = training::evaluate_split(model, sets, dataset, split, smoothing);

  const auto idx = dataset.split_indices(split);
  for (int j = 0; j < p; ++j) {
    // Materialized copies keep the shared cache untouched.
    std::map<std::string, ExplanationSet> disabled;
    for (int i : idx) {
      const auto& id = dataset.samples[static_cast<size_t>(i)].id;
      disabled.emplace(id, ensembler::disable_input(sets(id), j));
    }
    auto lookup = [&disabled](const std::string& id) -> const ExplanationSet& {
      auto it = disabled.find(id);
      require(it != disabled.end(), ErrorCode::not_found,
              "missing explanation set: " + id);
      return it->second;
    };
    const auto ablated =
        training::evaluate_split(model, lookup, dataset, split, smoothing);

    AblationRow row;
    row.method = disabled.begin()->second.maps[static_cast<size_t>(j)].method;
    row.ablated = ablated;
    row.diff_acc = report.baseline.ens_acc - ablated.ens_acc;
    row.diff_f1 = report.baseline.ens_f1 - ablated.ens_f1;
    row.diff_iou = report.baseline.ens_iou - ablated.ens_iou;
    row.quot_acc = quotient(ablated.ens_acc, report.baseline.ens_acc);
    row.quot_f1 = quotient(ablated.ens_f1, report.baseline.ens_f1);
    row.quot_iou = quotient(ablated.ens_iou, report.baseline.ens_iou);
    report.rows.push_back(std::move(row));
  }

  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     return a.diff_iou > b.diff_iou;
                   });
  return report;
}

}  // namespace xaiens::ablation
