// SPDX-License-Identifier: Apache-2.0
#include "xaiens/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xaiens/csvio.hpp"

namespace xaiens::training {

double soft_dice_loss(const Tensor& pred, const Tensor& mask, double smoothing) {
  require(pred.same_shape(mask), ErrorCode::invalid_argument,
          "soft_dice_loss: shape mismatch");
  double inter = 0.0, sums = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * mask[i];
    sums += static_cast<double>(pred[i]) + mask[i];
  }
  return 1.0 - (2.0 * inter + smoothing) / (sums + smoothing);
}

std::vector<double> soft_dice_gradient(const Tensor& pred, const Tensor& mask,
                                       double smoothing) {
  require(pred.same_shape(mask), ErrorCode::invalid_argument,
          "soft_dice_gradient: shape mismatch");
  double inter = 0.0, sums = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * mask[i];
    sums += static_cast<double>(pred[i]) + mask[i];
  }
  const double denom = sums + smoothing;
  const double num = 2.0 * inter + smoothing;
  std::vector<double> grad(pred.size());
  for (size_t i = 0; i < pred.size(); ++i)
    grad[i] = (num - 2.0 * mask[i] * denom) / (denom * denom);
  return grad;
}

void TrainConfig::validate() const {
  require(lr > lr_floor, ErrorCode::invalid_argument, "lr must exceed lr_floor");
  require(max_epochs >= 1, ErrorCode::invalid_argument, "max_epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
  require(plateau_patience >= 1, ErrorCode::invalid_argument,
          "plateau_patience must be >= 1");
}

void TrainHistory::write_csv(const std::filesystem::path& path,
                             const std::string& config_digest) const {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records)
    rows.push_back({std::to_string(r.epoch), format_double(r.lr),
                    format_double(r.train_loss), format_double(r.valid_loss),
                    format_double(r.ens_acc), format_double(r.ens_f1),
                    format_double(r.ens_iou)});
  csvio::write_csv(path, config_digest,
                   {"epoch", "lr", "train_loss", "valid_loss", "ens_acc", "ens_f1",
                    "ens_iou"},
                   rows,
                   {"stop_reason=" + stop_reason,
                    "best_epoch=" + std::to_string(best_epoch)});
}

namespace {

Tensor pack_masks(const Dataset& dataset, const std::vector<int>& idx, size_t start,
                  size_t end) {
  const auto& first = dataset.samples[static_cast<size_t>(idx[start])];
  const int side = first.mask.dim(0);
  Tensor out({static_cast<int>(end - start), 1, side, side});
  for (size_t i = start; i < end; ++i) {
    const auto& s = dataset.samples[static_cast<size_t>(idx[i])];
    std::copy(s.mask.data(), s.mask.data() + s.mask.size(),
              out.data() + (i - start) * s.mask.size());
  }
  return out;
}

struct SplitEval {
  double mean_loss = 0.0;
  metrics::Confusion confusion;
};

SplitEval eval_on_indices(ensembler::EnsemblerModel& model, const SetLookup& sets,
                          const Dataset& dataset, const std::vector<int>& idx,
                          double smoothing, float cutoff) {
  SplitEval out;
  const int batch = 16;
  double loss_sum = 0.0;
  for (size_t start = 0; start < idx.size(); start += batch) {
    const size_t end = std::min(idx.size(), start + batch);
    std::vector<const ExplanationSet*> batch_sets;
    for (size_t i = start; i < end; ++i)
      batch_sets.push_back(&sets(dataset.samples[static_cast<size_t>(idx[i])].id));
    const auto inputs = model.pack_inputs(batch_sets);
    nn::Var pred = model.forward_graph(inputs, false);
    const int side = pred.value().dim(2);
    for (size_t i = start; i < end; ++i) {
      const auto& s = dataset.samples[static_cast<size_t>(idx[i])];
      Tensor values({side, side});
      std::copy(pred.value().data() + (i - start) * values.size(),
                pred.value().data() + (i - start + 1) * values.size(),
                values.data());
      loss_sum += soft_dice_loss(values, s.mask, smoothing);
      out.confusion += metrics::pixel_confusion(ensembler::binarize(values, cutoff),
                                                metrics::mask_to_binary(s.mask));
    }
  }
  out.mean_loss = loss_sum / static_cast<double>(idx.size());
  return out;
}

}  // namespace

TrainHistory train(ensembler::EnsemblerModel& model, const SetLookup& sets,
                   const Dataset& dataset, const TrainConfig& cfg,
                   std::string* best_state) {
  cfg.validate();
  const auto train_idx = dataset.split_indices(Split::train);
  const auto valid_idx = dataset.split_indices(Split::test);
  require(!train_idx.empty(), ErrorCode::invalid_argument, "train split is empty");
  require(!valid_idx.empty(), ErrorCode::invalid_argument, "validation split is empty");

  // Fail fast on missing explanation sets.
  for (const auto& s : dataset.samples) (void)sets(s.id);

  nn::Adam opt(model.parameters(), cfg.lr);
  double lr = cfg.lr;
  TrainHistory history;
  history.best_valid_loss = std::numeric_limits<double>::infinity();
  int epochs_since_progress = 0;  // reset on improvement and on halving

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng(derive_seed(cfg.seed, {"ens-epoch", std::to_string(epoch)}));
    rng.shuffle(order);

    double train_loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<const ExplanationSet*> batch_sets;
      for (size_t i = start; i < end; ++i)
        batch_sets.push_back(&sets(dataset.samples[static_cast<size_t>(order[i])].id));
      const auto inputs = model.pack_inputs(batch_sets);
      const Tensor targets = pack_masks(dataset, order, start, end);

      opt.zero_grad();
      nn::Var pred = model.forward_graph(inputs, true);
      nn::Var loss = nn::soft_dice(pred, targets, static_cast<float>(cfg.smoothing));
      require(std::isfinite(loss.value()[0]), ErrorCode::runtime,
              "non-finite training loss at epoch " + std::to_string(epoch) +
                  ", batch " + std::to_string(batches));
      nn::backward(loss);
      opt.step();
      train_loss_sum += loss.value()[0];
      ++batches;
    }

    const SplitEval val = eval_on_indices(model, sets, dataset, valid_idx,
                                          cfg.smoothing, model.config().cutoff);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss_sum / std::max(1, batches);
    rec.valid_loss = val.mean_loss;
    rec.ens_acc = metrics::ens_metric(val.confusion, metrics::EnsKind::acc);
    rec.ens_f1 = metrics::ens_metric(val.confusion, metrics::EnsKind::f1);
    rec.ens_iou = metrics::ens_metric(val.confusion, metrics::EnsKind::iou);
    history.records.push_back(rec);

    if (val.mean_loss < history.best_valid_loss - cfg.min_delta) {
      history.best_valid_loss = val.mean_loss;
      history.best_epoch = epoch;
      epochs_since_progress = 0;
      if (best_state) {
        nlohmann::json state;
        state["epoch"] = epoch;
        state["lr"] = lr;
        state["valid_loss"] = val.mean_loss;
        *best_state = model.to_bytes(state);
      }
    } else {
      ++epochs_since_progress;
      if (epochs_since_progress >= cfg.plateau_patience) {
        lr /= 2.0;
        opt.set_lr(lr);
        epochs_since_progress = 0;  // halvings at least plateau_patience apart
        if (lr < cfg.lr_floor) {
          history.stop_reason = "lr_floor";
          return history;
        }
      }
    }
  }
  history.stop_reason = "max_epochs";
  return history;
}

metrics::MetricReport evaluate_split(ensembler::EnsemblerModel& model,
                                     const SetLookup& sets, const Dataset& dataset,
                                     Split split, double smoothing) {
  const auto idx = dataset.split_indices(split);
  require(!idx.empty(), ErrorCode::invalid_argument, "evaluate_split: empty split");
  const SplitEval eval =
      eval_on_indices(model, sets, dataset, idx, smoothing, model.config().cutoff);
  metrics::MetricReport report;
  report.ens_acc = metrics::ens_metric(eval.confusion, metrics::EnsKind::acc);
  report.ens_f1 = metrics::ens_metric(eval.confusion, metrics::EnsKind::f1);
  report.ens_iou = metrics::ens_metric(eval.confusion, metrics::EnsKind::iou);
  report.loss = eval.mean_loss;
  report.split = split == Split::train ? "train" : "test";
  return report;
}

}  // namespace xaiens::training
