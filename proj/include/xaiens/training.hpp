// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xaiens/data.hpp"
#include "xaiens/ensembler.hpp"
#include "xaiens/metrics.hpp"

namespace xaiens::training {

/// Soft dice loss 1 - (2*sum(pred*mask) + s) / (sum(pred) + sum(mask) + s),
/// computed with double accumulation. pred in [0,1], mask in {0,1}.
double soft_dice_loss(const Tensor& pred, const Tensor& mask, double smoothing);
/// Analytic gradient of soft_dice_loss with respect to pred.
std::vector<double> soft_dice_gradient(const Tensor& pred, const Tensor& mask,
                                       double smoothing);

struct TrainConfig {
  double lr = 2e-4;
  int plateau_patience = 20;
  double lr_floor = 1e-9;
  int max_epochs = 200;
  int batch_size = 8;
  double smoothing = 1.0;
  double min_delta = 1e-5;  // improvement threshold for the plateau test
  uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double ens_acc = 0.0;
  double ens_f1 = 0.0;
  double ens_iou = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  int best_epoch = -1;
  double best_valid_loss = 0.0;
  std::string stop_reason;

  void write_csv(const std::filesystem::path& path,
                 const std::string& config_digest) const;
};

using SetLookup = std::function<const ExplanationSet&(const std::string& image_id)>;

/// Trains the ensembler on the train split with Adam, halving the learning
/// rate after `plateau_patience` epochs without validation improvement and
/// stopping at the lr floor or the epoch cap. The test split serves as the
/// validation set. Returns the history; the model holds the final weights
/// and `best_state` (if non-null) receives the best-validation checkpoint
/// bytes.
TrainHistory train(ensembler::EnsemblerModel& model, const SetLookup& sets,
                   const Dataset& dataset, const TrainConfig& cfg,
                   std::string* best_state = nullptr);

/// Micro-averaged ens metrics plus mean soft-dice loss over one split.
metrics::MetricReport evaluate_split(ensembler::EnsemblerModel& model,
                                     const SetLookup& sets, const Dataset& dataset,
                                     Split split, double smoothing = 1.0);

}  // namespace xaiens::training
