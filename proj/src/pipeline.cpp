// SPDX-License-Identifier: Apache-2.0
#include "xaiens/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "xaiens/ablation.hpp"
#include "xaiens/checkpoint.hpp"
#include "xaiens/classifier.hpp"
#include "xaiens/csvio.hpp"
#include "xaiens/data.hpp"
#include "xaiens/quality.hpp"
#include "xaiens/training.hpp"

namespace xaiens::pipeline {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed", "out", "threads",
      // data
      "data.source", "data.n", "data.side", "data.classes", "data.split_ratio",
      "data.kfold", "data.fold", "data.norm_mean", "data.norm_std",
      // augment
      "augment.prob", "augment.max_shift_frac", "augment.scale_lo",
      "augment.scale_hi", "augment.max_rotate_deg", "augment.max_hue_shift",
      "augment.saturation_lo", "augment.saturation_hi",
      "augment.center_crop_fraction",
      // classifier
      "classifier.base_channels", "classifier.epochs", "classifier.batch_size",
      "classifier.lr", "classifier.accuracy_floor", "classifier.use_augmentation",
      // explain
      "explain.preset", "explain.ig_steps", "explain.nt_samples",
      "explain.nt_sigma_scale", "explain.gshap_samples", "explain.gshap_blur_sigma",
      "explain.occlusion_window", "explain.occlusion_stride", "explain.fill_value",
      "explain.lime_samples", "explain.lime_ridge_lambda", "explain.grid_cells",
      "explain.shapley_permutations", "explain.forward_batch",
      // ensembler
      "ensembler.fusion", "ensembler.width_scale", "ensembler.cutoff",
      // train
      "train.lr", "train.plateau_patience", "train.lr_floor", "train.max_epochs",
      "train.batch_size", "train.smoothing", "train.min_delta",
      // eval
      "eval.split", "eval.quality_images", "eval.lipschitz_images",
      "eval.randomisation_images", "eval.flip_step", "eval.flip_baseline",
      "eval.lipschitz_radius", "eval.lipschitz_samples", "eval.randomisation_mode",
      "eval.baseline_metrics",
      // ablate
      "ablate.split",
  };
  return keys;
}

struct PipelineSetup {
  Config raw;
  std::string digest;
  RunPaths paths;
  uint64_t seed = 0;

  std::string data_source;
  int n = 200, side = 64;
  std::vector<data::ShapeKind> classes;
  double split_ratio = 0.8;
  int kfold = 0, fold = 0;
  data::AugmentConfig augment;

  int clf_base = 8, clf_epochs = 30, clf_batch = 16;
  double clf_lr = 1e-3, accuracy_floor = 0.9;
  bool clf_aug = true;

  std::string preset;
  explainers::ExplainConfig explain;

  ensembler::EnsemblerConfig ens;  // p filled from the preset
  training::TrainConfig train;

  Split eval_split = Split::test;
  int quality_images = 16, lipschitz_images = 4, randomisation_images = 2;
  quality::EvalConfig quality;
  std::string baseline_metrics;
  Split ablate_split = Split::test;
};

std::array<float, 3> parse_triple(const Config& cfg, const std::string& key,
                                  float fallback) {
  const auto list = cfg.get_list(key);
  if (list.empty()) return {fallback, fallback, fallback};
  require(list.size() == 3, ErrorCode::config, key + " must have 3 entries");
  std::array<float, 3> out;
  for (int i = 0; i < 3; ++i) out[static_cast<size_t>(i)] = std::stof(list[static_cast<size_t>(i)]);
  return out;
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  fail(ErrorCode::config, "unknown split: " + name);
}

PipelineSetup make_setup(const Config& cfg) {
  for (const auto& [key, value] : cfg.entries())
    require(known_keys().count(key) > 0, ErrorCode::config,
            "unknown config key: " + key);

  PipelineSetup s;
  s.raw = cfg;
  s.digest = cfg.digest();
  s.paths.out = cfg.get_string("out", "runs/default");
  s.seed = cfg.get_u64("seed", 0);
  set_num_threads(cfg.get_int("threads", 0));

  s.data_source = cfg.get_string("data.source", "synthetic");
  s.n = cfg.get_int("data.n", 200);
  s.side = cfg.get_int("data.side", 64);
  auto class_names = cfg.get_list("data.classes");
  if (class_names.empty()) class_names = {"circle", "square"};
  for (const auto& name : class_names)
    s.classes.push_back(data::shape_kind_from_name(name));
  s.split_ratio = cfg.get_double("data.split_ratio", 0.8);
  s.kfold = cfg.get_int("data.kfold", 0);
  s.fold = cfg.get_int("data.fold", 0);

  s.augment.prob = cfg.get_double("augment.prob", 0.5);
  s.augment.max_shift_frac = cfg.get_double("augment.max_shift_frac", 0.10);
  s.augment.scale_lo = cfg.get_double("augment.scale_lo", 0.9);
  s.augment.scale_hi = cfg.get_double("augment.scale_hi", 1.1);
  s.augment.max_rotate_deg = cfg.get_double("augment.max_rotate_deg", 15.0);
  s.augment.max_hue_shift = cfg.get_double("augment.max_hue_shift", 0.05);
  s.augment.saturation_lo = cfg.get_double("augment.saturation_lo", 0.8);
  s.augment.saturation_hi = cfg.get_double("augment.saturation_hi", 1.2);
  s.augment.center_crop_fraction = cfg.get_double("augment.center_crop_fraction", 1.0);
  s.augment.mean = parse_triple(cfg, "data.norm_mean", 0.5f);
  s.augment.stddev = parse_triple(cfg, "data.norm_std", 0.5f);

  s.clf_base = cfg.get_int("classifier.base_channels", 8);
  s.clf_epochs = cfg.get_int("classifier.epochs", 30);
  s.clf_batch = cfg.get_int("classifier.batch_size", 16);
  s.clf_lr = cfg.get_double("classifier.lr", 1e-3);
  s.accuracy_floor = cfg.get_double("classifier.accuracy_floor", 0.9);
  s.clf_aug = cfg.get_bool("classifier.use_augmentation", true);

  s.preset = cfg.get_string("explain.preset", explainers::kPresetLocal3);
  s.explain.ig_steps = cfg.get_int("explain.ig_steps", 32);
  s.explain.nt_samples = cfg.get_int("explain.nt_samples", 20);
  s.explain.nt_sigma_scale = cfg.get_double("explain.nt_sigma_scale", 0.1);
  s.explain.gshap_samples = cfg.get_int("explain.gshap_samples", 20);
  s.explain.gshap_blur_sigma = cfg.get_double("explain.gshap_blur_sigma", 2.0);
  s.explain.occlusion_window = cfg.get_int("explain.occlusion_window", s.side / 8);
  s.explain.occlusion_stride = cfg.get_int("explain.occlusion_stride", s.side / 16);
  s.explain.fill_value = static_cast<float>(cfg.get_double("explain.fill_value", 0.0));
  s.explain.lime_samples = cfg.get_int("explain.lime_samples", 200);
  s.explain.lime_ridge_lambda = cfg.get_double("explain.lime_ridge_lambda", 0.01);
  s.explain.grid_cells = cfg.get_int("explain.grid_cells", 8);
  s.explain.shapley_permutations = cfg.get_int("explain.shapley_permutations", 25);
  s.explain.forward_batch = cfg.get_int("explain.forward_batch", 32);
  s.explain.seed = s.seed;

  s.ens.fusion = ensembler::fusion_from_name(cfg.get_string("ensembler.fusion", "concat"));
  s.ens.width_scale = cfg.get_double("ensembler.width_scale", 0.25);
  s.ens.cutoff = static_cast<float>(cfg.get_double("ensembler.cutoff", 0.5));
  s.ens.input_side = s.side;
  s.ens.p = static_cast<int>(explainers::preset_methods(s.preset).size());

  s.train.lr = cfg.get_double("train.lr", 2e-4);
  s.train.plateau_patience = cfg.get_int("train.plateau_patience", 20);
  s.train.lr_floor = cfg.get_double("train.lr_floor", 1e-9);
  s.train.max_epochs = cfg.get_int("train.max_epochs", 200);
  s.train.batch_size = cfg.get_int("train.batch_size", 8);
  s.train.smoothing = cfg.get_double("train.smoothing", 1.0);
  s.train.min_delta = cfg.get_double("train.min_delta", 1e-5);
  s.train.seed = s.seed;

  s.eval_split = split_from_name(cfg.get_string("eval.split", "test"));
  s.quality_images = cfg.get_int("eval.quality_images", 16);
  s.lipschitz_images = cfg.get_int("eval.lipschitz_images", 4);
  s.randomisation_images = cfg.get_int("eval.randomisation_images", 2);
  s.quality.flip_step = cfg.get_double("eval.flip_step", 0.01);
  s.quality.flip_baseline = static_cast<float>(cfg.get_double("eval.flip_baseline", 0.0));
  s.quality.lipschitz_radius = cfg.get_double("eval.lipschitz_radius", 0.05);
  s.quality.lipschitz_samples = cfg.get_int("eval.lipschitz_samples", 10);
  const std::string rmode = cfg.get_string("eval.randomisation_mode", "cascading");
  if (rmode == "cascading")
    s.quality.randomisation_mode = quality::RandomisationMode::cascading;
  else if (rmode == "independent")
    s.quality.randomisation_mode = quality::RandomisationMode::independent;
  else
    fail(ErrorCode::config, "unknown randomisation mode: " + rmode);
  s.quality.seed = s.seed;
  // Perturbations live in the normalized input domain.
  s.quality.clip_min = -10.f;
  s.quality.clip_max = 10.f;
  s.baseline_metrics = cfg.get_string("eval.baseline_metrics", "");
  s.ablate_split = split_from_name(cfg.get_string("ablate.split", "test"));
  return s;
}

Dataset load_pipeline_dataset(const PipelineSetup& s) {
  const fs::path root =
      s.data_source == "synthetic" ? s.paths.dataset() : fs::path(s.data_source);
  require(fs::exists(root), ErrorCode::not_found,
          "dataset not found at " + root.string() +
              (s.data_source == "synthetic" ? " (run the synth stage first)" : ""));
  Dataset ds = data::load_dataset(root, s.split_ratio, s.seed, s.side);
  if (s.kfold >= 2) {
    const auto folds = data::kfold_split(ds, s.kfold, s.seed);
    ds = data::apply_fold(ds, folds, s.fold);
  }
  return ds;
}

Tensor normalized_image(const PipelineSetup& s, const ImageSample& sample) {
  return data::normalize_image(sample.image, s.augment.mean, s.augment.stddev);
}

std::unique_ptr<ToyCnnClassifier> load_classifier(const PipelineSetup& s) {
  require(fs::exists(s.paths.classifier()), ErrorCode::not_found,
          "classifier checkpoint missing at " + s.paths.classifier().string() +
              " (run the train-classifier stage first)");
  return ToyCnnClassifier::load(s.paths.classifier());
}

struct LoadedSets {
  std::map<std::string, ExplanationSet> by_id;

  training::SetLookup lookup() const {
    return [this](const std::string& id) -> const ExplanationSet& {
      auto it = by_id.find(id);
      require(it != by_id.end(), ErrorCode::not_found,
              "no cached explanation set for image '" + id +
                  "' (run the explain stage first)");
      return it->second;
    };
  }
};

LoadedSets load_all_sets(const Dataset& ds,
                         const explainers::ExplanationCache& cache) {
  LoadedSets out;
  for (const auto& sample : ds.samples)
    out.by_id.emplace(sample.id, cache.load_set(sample.id));
  return out;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "synth",          "train-classifier", "explain", "train-ensembler",
      "eval",           "ablate",           "report"};
  return names;
}

std::string validate_config(const Config& cfg) { return make_setup(cfg).digest; }

void cmd_synth(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  require(s.data_source == "synthetic", ErrorCode::config,
          "data.source is a path; nothing to synthesize");
  const Dataset ds =
      data::generate_synthetic_shapes(s.n, s.side, s.classes, s.seed);
  data::write_dataset(ds, s.paths.dataset());
  std::printf("synth: wrote %zu samples (%d classes) to %s\n", ds.samples.size(),
              static_cast<int>(s.classes.size()), s.paths.dataset().c_str());
}

void cmd_train_classifier(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  const Dataset ds = load_pipeline_dataset(s);

  ToyCnnClassifier model(s.side, static_cast<int>(ds.class_names.size()), s.clf_base,
                         s.seed);
  ClassifierTrainConfig tcfg;
  tcfg.epochs = s.clf_epochs;
  tcfg.batch_size = s.clf_batch;
  tcfg.lr = s.clf_lr;
  tcfg.seed = s.seed;
  tcfg.augment = s.augment;
  tcfg.use_augmentation = s.clf_aug;
  const ClassifierTrainResult result = train_toy_classifier(model, ds, tcfg);
  model.save(s.paths.classifier());

  std::printf("train-classifier: train_accuracy=%s test_accuracy=%s digest=%s\n",
              fmt(result.train_accuracy).c_str(), fmt(result.test_accuracy).c_str(),
              model.digest().c_str());
  if (result.test_accuracy < s.accuracy_floor)
    std::fprintf(stderr,
                 "warning: classifier test accuracy %s below floor %s\n",
                 fmt(result.test_accuracy).c_str(), fmt(s.accuracy_floor).c_str());
}

void cmd_explain(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  const Dataset ds = load_pipeline_dataset(s);
  auto model = load_classifier(s);
  explainers::ExplanationCache cache(s.paths.cache(), model->digest(), s.preset,
                                     s.explain);

  const auto methods = explainers::preset_methods(s.preset);
  size_t computed = 0, reused = 0;
  for (const auto& sample : ds.samples) {
    const Tensor image = normalized_image(s, sample);
    for (const auto& method : methods) {
      if (cache.contains(sample.id, method)) {
        // Reuse only entries whose header still matches model and config.
        try {
          (void)cache.load(sample.id, method);
          ++reused;
          continue;
        } catch (const Error&) {
          // Stale or unreadable: recompute below.
        }
      }
      cache.store(sample.id,
                  explainers::explain(*model, image, sample.label, method, s.explain));
      ++computed;
    }
  }
  std::printf("explain: preset=%s computed=%zu reused=%zu cache=%s\n",
              s.preset.c_str(), computed, reused, s.paths.cache().c_str());
}

void cmd_train_ensembler(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  const Dataset ds = load_pipeline_dataset(s);
  auto clf = load_classifier(s);
  explainers::ExplanationCache cache(s.paths.cache(), clf->digest(), s.preset,
                                     s.explain);
  const LoadedSets sets = load_all_sets(ds, cache);

  ensembler::EnsemblerModel model(s.ens, s.seed);
  std::string best_state;
  const training::TrainHistory history =
      training::train(model, sets.lookup(), ds, s.train, &best_state);
  history.write_csv(s.paths.history(), s.digest);

  if (!best_state.empty()) {
    ckpt::write_file(s.paths.ensembler(), best_state);
  } else {
    model.save(s.paths.ensembler());
  }
  std::printf(
      "train-ensembler: fusion=%s p=%d epochs=%zu best_epoch=%d stop=%s params=%zu\n",
      ensembler::fusion_name(s.ens.fusion), s.ens.p, history.records.size(),
      history.best_epoch, history.stop_reason.c_str(), model.count_parameters());
}

namespace {

// Radar + curves support: the ensembled explanation enters the quality
// metrics as an H x W map broadcast to 3 channels, scored by the same code
// path as the component methods.
AttributionMap ensemble_as_attribution(ensembler::EnsemblerModel& model,
                                       const ExplanationSet& set) {
  const ensembler::EnsembledExplanation out = model.forward(set);
  AttributionMap map;
  map.method = "Ensemble";
  map.range = ValueRange::unsigned_unit;
  const int side = out.values.dim(0);
  map.values = Tensor({3, side, side});
  for (int c = 0; c < 3; ++c)
    std::copy(out.values.data(), out.values.data() + out.values.size(),
              map.values.data() + static_cast<size_t>(c) * out.values.size());
  return map;
}

struct QualityInputs {
  const PipelineSetup& s;
  const Dataset& ds;
  ToyCnnClassifier& clf;
  ensembler::EnsemblerModel& ens;
  const LoadedSets& sets;
  std::vector<int> eval_idx;  // test-split sample indices used for quality
};

// Attribution for one method of the current preset, recomputed on demand
// (used where the cached map does not apply: perturbed or randomized runs).
Tensor explain_values(const PipelineSetup& s, Classifier& clf, const Tensor& image,
                      int target, const std::string& method) {
  return explainers::explain(clf, image, target, method, s.explain).values;
}

quality::QualityScores score_method(const QualityInputs& q, const std::string& method,
                                    int slot /* -1 = ensemble */) {
  quality::QualityScores scores;
  scores.method = method;

  quality::PointingGameBatch pg;
  double faith_sum = 0.0;
  int faith_n = 0;
  double gini_sum = 0.0;
  int gini_n = 0;

  auto attr_for = [&](const ImageSample& sample) -> AttributionMap {
    if (slot >= 0) return q.sets.by_id.at(sample.id).maps[static_cast<size_t>(slot)];
    return ensemble_as_attribution(q.ens, q.sets.by_id.at(sample.id));
  };

  for (int i : q.eval_idx) {
    const auto& sample = q.ds.samples[static_cast<size_t>(i)];
    const AttributionMap attr = attr_for(sample);
    if (sample.mask.sum() > 0) {
      pg.hits += quality::pointing_game(attr, sample.mask);
      pg.counted += 1;
    } else {
      pg.skipped_empty_mask += 1;
    }
    const Tensor image = data::normalize_image(sample.image, q.s.augment.mean,
                                               q.s.augment.stddev);
    const auto flip =
        quality::pixel_flipping(q.clf, image, attr, sample.label, q.s.quality);
    faith_sum += flip.faithfulness;
    ++faith_n;
    gini_sum += quality::sparseness_gini(attr.values);
    ++gini_n;
  }
  scores.localisation = pg.rate();
  scores.faithfulness = faith_n ? faith_sum / faith_n : 0.0;
  scores.complexity = gini_n ? gini_sum / gini_n : 0.0;

  // Robustness and randomisation re-run explainers, so they use smaller
  // image budgets.
  double lip_sum = 0.0;
  int lip_n = 0;
  for (int k = 0; k < std::min<int>(q.s.lipschitz_images,
                                    static_cast<int>(q.eval_idx.size()));
       ++k) {
    const auto& sample = q.ds.samples[static_cast<size_t>(q.eval_idx[static_cast<size_t>(k)])];
    const Tensor image = data::normalize_image(sample.image, q.s.augment.mean,
                                               q.s.augment.stddev);
    quality::ExplainFn fn;
    if (slot >= 0) {
      fn = [&](const Tensor& x) {
        return explain_values(q.s, q.clf, x, sample.label, method);
      };
    } else {
      fn = [&](const Tensor& x) {
        ExplanationSet set;
        set.image_id = sample.id;
        set.preset = q.s.preset;
        for (const auto& m : explainers::preset_methods(q.s.preset))
          set.maps.push_back(explainers::explain(q.clf, x, sample.label, m, q.s.explain));
        return ensemble_as_attribution(q.ens, set).values;
      };
    }
    lip_sum += quality::local_lipschitz(fn, image, q.s.quality);
    ++lip_n;
  }
  scores.robustness = lip_n ? lip_sum / lip_n : 0.0;

  double rand_sum = 0.0;
  int rand_n = 0;
  for (int k = 0; k < std::min<int>(q.s.randomisation_images,
                                    static_cast<int>(q.eval_idx.size()));
       ++k) {
    const auto& sample = q.ds.samples[static_cast<size_t>(q.eval_idx[static_cast<size_t>(k)])];
    const Tensor image = data::normalize_image(sample.image, q.s.augment.mean,
                                               q.s.augment.stddev);
    quality::ModelExplainFn fn;
    if (slot >= 0) {
      fn = [&](Classifier& m, const Tensor& x) {
        return explain_values(q.s, m, x, sample.label, method);
      };
    } else {
      fn = [&](Classifier& m, const Tensor& x) {
        ExplanationSet set;
        set.image_id = sample.id;
        set.preset = q.s.preset;
        for (const auto& name : explainers::preset_methods(q.s.preset))
          set.maps.push_back(explainers::explain(m, x, sample.label, name, q.s.explain));
        return ensemble_as_attribution(q.ens, set).values;
      };
    }
    rand_sum +=
        quality::model_parameter_randomisation(q.clf, fn, image, q.s.quality).score;
    ++rand_n;
  }
  scores.randomisation = rand_n ? rand_sum / rand_n : 0.0;
  return scores;
}

std::vector<double> mean_flip_curve(const QualityInputs& q, int slot) {
  std::vector<double> acc;
  for (int i : q.eval_idx) {
    const auto& sample = q.ds.samples[static_cast<size_t>(i)];
    const AttributionMap attr =
        slot >= 0 ? q.sets.by_id.at(sample.id).maps[static_cast<size_t>(slot)]
                  : ensemble_as_attribution(q.ens, q.sets.by_id.at(sample.id));
    const Tensor image = data::normalize_image(sample.image, q.s.augment.mean,
                                               q.s.augment.stddev);
    const auto flip =
        quality::pixel_flipping(q.clf, image, attr, sample.label, q.s.quality);
    if (acc.empty()) acc.assign(flip.curve.size(), 0.0);
    for (size_t k = 0; k < flip.curve.size(); ++k) acc[k] += flip.curve[k];
  }
  for (auto& v : acc) v /= static_cast<double>(q.eval_idx.size());
  return acc;
}

}  // namespace

void cmd_eval(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  const Dataset ds = load_pipeline_dataset(s);
  auto clf = load_classifier(s);
  explainers::ExplanationCache cache(s.paths.cache(), clf->digest(), s.preset,
                                     s.explain);
  const LoadedSets sets = load_all_sets(ds, cache);
  auto ens = ensembler::EnsemblerModel::load(s.paths.ensembler());
  require(ens->config().p == s.ens.p, ErrorCode::config,
          "ensembler checkpoint p does not match the configured preset");

  const auto lookup = sets.lookup();
  const auto train_report =
      training::evaluate_split(*ens, lookup, ds, Split::train, s.train.smoothing);
  const auto test_report =
      training::evaluate_split(*ens, lookup, ds, Split::test, s.train.smoothing);

  const std::string fusion = ensembler::fusion_name(s.ens.fusion);
  csvio::write_csv(
      s.paths.table1(), s.digest,
      {"train_ens_acc", "train_ens_f1", "train_ens_iou", "train_loss",
       "test_ens_acc", "test_ens_f1", "test_ens_iou", "test_loss"},
      {{fmt(train_report.ens_acc), fmt(train_report.ens_f1), fmt(train_report.ens_iou),
        fmt(train_report.loss), fmt(test_report.ens_acc), fmt(test_report.ens_f1),
        fmt(test_report.ens_iou), fmt(test_report.loss)}},
      {"fusion=" + fusion, "preset=" + s.preset});

  // Derived metrics; exh needs a baseline0-trained run's table1.
  double baseline_iou = 0.0;
  if (!s.baseline_metrics.empty()) {
    const auto base = csvio::read_csv(s.baseline_metrics);
    require(!base.rows.empty() && base.header.size() >= 7, ErrorCode::io,
            "baseline metrics file is malformed: " + s.baseline_metrics);
    for (size_t c = 0; c < base.header.size(); ++c)
      if (base.header[c] == "test_ens_iou") baseline_iou = std::stod(base.rows[0][c]);
    require(baseline_iou > 0.0, ErrorCode::invalid_argument,
            "baseline run has zero test IoU; exh undefined");
  }
  const auto derived = metrics::derive_metrics(train_report, test_report, baseline_iou);
  csvio::write_csv(s.paths.derived(), s.digest,
                   {"div_acc", "div_f1", "div_iou", "exh_iou"},
                   {{fmt(derived.div_acc), fmt(derived.div_f1), fmt(derived.div_iou),
                     std::isnan(derived.exh_iou) ? "nan" : fmt(derived.exh_iou)}});

  // Per-image records with confusion counts (class bars aggregate these).
  std::vector<std::vector<std::string>> per_image_rows;
  for (const auto& sample : ds.samples) {
    const auto out = ens->forward(sets.by_id.at(sample.id));
    const auto c = metrics::pixel_confusion(out.binary,
                                            metrics::mask_to_binary(sample.mask));
    per_image_rows.push_back(
        {sample.id, ds.class_names[static_cast<size_t>(sample.label)],
         sample.split == Split::train ? "train" : "test",
         fmt(metrics::ens_metric(c, metrics::EnsKind::iou)),
         fmt(metrics::ens_metric(c, metrics::EnsKind::f1)),
         fmt(metrics::ens_metric(c, metrics::EnsKind::acc)),
         std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.fn),
         std::to_string(c.tn)});
  }
  csvio::write_csv(s.paths.per_image(), s.digest,
                   {"id", "class", "split", "iou", "f1", "acc", "tp", "fp", "fn", "tn"},
                   per_image_rows);

  // Per-method binarized-attribution baselines on the eval split.
  const auto methods = explainers::preset_methods(s.preset);
  const auto eval_idx = ds.split_indices(s.eval_split);
  std::vector<std::vector<std::string>> baseline_rows;
  for (size_t j = 0; j < methods.size(); ++j) {
    metrics::Confusion acc_counts;
    for (int i : eval_idx) {
      const auto& sample = ds.samples[static_cast<size_t>(i)];
      const auto& map = sets.by_id.at(sample.id).maps[j];
      const auto bin = ensembler::binarize(map.channel_mean_abs(), 0.5f);
      acc_counts += metrics::pixel_confusion(bin, metrics::mask_to_binary(sample.mask));
    }
    baseline_rows.push_back(
        {methods[j], fmt(metrics::ens_metric(acc_counts, metrics::EnsKind::iou)),
         fmt(metrics::ens_metric(acc_counts, metrics::EnsKind::f1)),
         fmt(metrics::ens_metric(acc_counts, metrics::EnsKind::acc))});
  }
  csvio::write_csv(s.paths.baselines(), s.digest,
                   {"method", "iou_at_0.5", "f1_at_0.5", "acc_at_0.5"},
                   baseline_rows, {"split=" + std::string(s.eval_split == Split::train
                                                              ? "train"
                                                              : "test")});

  // Quality axes per component method plus the ensembled explanation.
  QualityInputs q{s, ds, *clf, *ens, sets, {}};
  const int budget = std::min<int>(s.quality_images, static_cast<int>(eval_idx.size()));
  q.eval_idx.assign(eval_idx.begin(), eval_idx.begin() + budget);

  std::vector<quality::QualityScores> all_scores;
  for (size_t j = 0; j < methods.size(); ++j)
    all_scores.push_back(score_method(q, methods[j], static_cast<int>(j)));
  all_scores.push_back(score_method(q, "Ensemble", -1));

  const auto radar = quality::radar_ranking(all_scores);
  std::vector<std::vector<std::string>> radar_rows;
  for (const auto& row : radar)
    radar_rows.push_back({row.method, row.axis, fmt(row.raw_score),
                          row.higher_better ? "higher" : "lower", fmt(row.rank)});
  csvio::write_csv(s.paths.radar(), s.digest,
                   {"method", "axis", "raw_score", "orientation", "rank"}, radar_rows);

  // Mean pixel-flipping curves.
  std::vector<std::vector<std::string>> curve_rows;
  for (size_t j = 0; j <= methods.size(); ++j) {
    const int slot = j < methods.size() ? static_cast<int>(j) : -1;
    const std::string name = j < methods.size() ? methods[j] : "Ensemble";
    const auto curve = mean_flip_curve(q, slot);
    for (size_t k = 0; k < curve.size(); ++k)
      curve_rows.push_back(
          {name, std::to_string(k),
           fmt(static_cast<double>(k) / (static_cast<double>(curve.size()) - 1.0)),
           fmt(curve[k])});
  }
  csvio::write_csv(s.paths.curves(), s.digest,
                   {"method", "step", "fraction_flipped", "mean_score"}, curve_rows);

  std::printf(
      "eval: train iou=%s f1=%s acc=%s | test iou=%s f1=%s acc=%s | div_iou=%s\n",
      fmt(train_report.ens_iou).c_str(), fmt(train_report.ens_f1).c_str(),
      fmt(train_report.ens_acc).c_str(), fmt(test_report.ens_iou).c_str(),
      fmt(test_report.ens_f1).c_str(), fmt(test_report.ens_acc).c_str(),
      fmt(derived.div_iou).c_str());
}

void cmd_ablate(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  const Dataset ds = load_pipeline_dataset(s);
  auto clf = load_classifier(s);
  explainers::ExplanationCache cache(s.paths.cache(), clf->digest(), s.preset,
                                     s.explain);
  const LoadedSets sets = load_all_sets(ds, cache);
  auto ens = ensembler::EnsemblerModel::load(s.paths.ensembler());

  const auto report =
      ablation::ablate(*ens, sets.lookup(), ds, s.ablate_split, s.train.smoothing);
  auto cell = [](double v) { return std::isnan(v) ? std::string("nan") : fmt(v); };
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : report.rows)
    rows.push_back({row.method, cell(row.diff_acc), cell(row.diff_f1),
                    cell(row.diff_iou), cell(row.quot_acc), cell(row.quot_f1),
                    cell(row.quot_iou)});
  csvio::write_csv(s.paths.table2(), s.digest,
                   {"method", "diff_acc", "diff_f1", "diff_iou", "quot_acc",
                    "quot_f1", "quot_iou"},
                   rows,
                   {"split=" + report.split + " (averages over this split only)",
                    "full_ens_acc=" + fmt(report.baseline.ens_acc),
                    "full_ens_f1=" + fmt(report.baseline.ens_f1),
                    "full_ens_iou=" + fmt(report.baseline.ens_iou)});
  std::printf("ablate: %zu rows written to %s\n", report.rows.size(),
              s.paths.table2().c_str());
}

void cmd_report(const Config& cfg) {
  const PipelineSetup s = make_setup(cfg);
  require(fs::exists(s.paths.metrics()), ErrorCode::not_found,
          "no eval outputs under " + s.paths.metrics().string() +
              " (run the eval stage first)");

  // Inputs must carry the current config digest.
  const auto table1 = csvio::read_csv(s.paths.table1());
  csvio::verify_digest(table1, s.digest, s.paths.table1().string());
  const auto derived = csvio::read_csv(s.paths.derived());
  csvio::verify_digest(derived, s.digest, s.paths.derived().string());
  const auto radar = csvio::read_csv(s.paths.radar());
  csvio::verify_digest(radar, s.digest, s.paths.radar().string());
  const auto curves = csvio::read_csv(s.paths.curves());
  csvio::verify_digest(curves, s.digest, s.paths.curves().string());
  const auto per_image = csvio::read_csv(s.paths.per_image());
  csvio::verify_digest(per_image, s.digest, s.paths.per_image().string());

  fs::create_directories(s.paths.report());

  // Radar axes (with orientation flags) and flipping curves pass through.
  csvio::write_csv(s.paths.report() / "radar.csv", s.digest, radar.header, radar.rows);
  csvio::write_csv(s.paths.report() / "flipping_curves.csv", s.digest, curves.header,
                   curves.rows);

  // Per-class bars: micro-aggregated confusion over per-image records.
  struct ClassAgg {
    metrics::Confusion train, test;
  };
  std::map<std::string, ClassAgg> per_class;
  for (const auto& row : per_image.rows) {
    metrics::Confusion c;
    c.tp = std::stoull(row[6]);
    c.fp = std::stoull(row[7]);
    c.fn = std::stoull(row[8]);
    c.tn = std::stoull(row[9]);
    if (row[2] == "train")
      per_class[row[1]].train += c;
    else
      per_class[row[1]].test += c;
  }
  std::vector<std::vector<std::string>> bar_rows;
  for (const auto& [name, agg] : per_class) {
    for (const auto& [split, c] :
         {std::pair<std::string, metrics::Confusion>{"train", agg.train},
          std::pair<std::string, metrics::Confusion>{"test", agg.test}}) {
      if (c.total() == 0) continue;
      bar_rows.push_back({name, split,
                          fmt(metrics::ens_metric(c, metrics::EnsKind::iou)),
                          fmt(metrics::ens_metric(c, metrics::EnsKind::f1)),
                          fmt(metrics::ens_metric(c, metrics::EnsKind::acc))});
    }
  }
  csvio::write_csv(s.paths.report() / "class_bars.csv", s.digest,
                   {"class", "split", "ens_iou", "ens_f1", "ens_acc"}, bar_rows);

  // JSON-lines summary of everything above.
  std::string jsonl;
  {
    nlohmann::json rec;
    rec["record"] = "config";
    rec["digest"] = s.digest;
    jsonl += rec.dump() + "\n";
  }
  {
    nlohmann::json rec;
    rec["record"] = "table1";
    for (size_t c = 0; c < table1.header.size(); ++c)
      rec[table1.header[c]] = table1.rows[0][c];
    jsonl += rec.dump() + "\n";
  }
  {
    nlohmann::json rec;
    rec["record"] = "derived";
    for (size_t c = 0; c < derived.header.size(); ++c)
      rec[derived.header[c]] = derived.rows[0][c];
    jsonl += rec.dump() + "\n";
  }
  for (const auto& row : radar.rows) {
    nlohmann::json rec;
    rec["record"] = "radar";
    for (size_t c = 0; c < radar.header.size(); ++c) rec[radar.header[c]] = row[c];
    jsonl += rec.dump() + "\n";
  }
  ckpt::write_file(s.paths.report() / "summary.jsonl", jsonl);

  std::printf("report: bundle written to %s\n", s.paths.report().c_str());
}

void run_stage(const Config& cfg, const std::string& stage) {
  if (stage == "synth") return cmd_synth(cfg);
  if (stage == "train-classifier") return cmd_train_classifier(cfg);
  if (stage == "explain") return cmd_explain(cfg);
  if (stage == "train-ensembler") return cmd_train_ensembler(cfg);
  if (stage == "eval") return cmd_eval(cfg);
  if (stage == "ablate") return cmd_ablate(cfg);
  if (stage == "report") return cmd_report(cfg);
  if (stage == "run") {
    const PipelineSetup s = make_setup(cfg);
    if (s.data_source == "synthetic") cmd_synth(cfg);
    cmd_train_classifier(cfg);
    cmd_explain(cfg);
    cmd_train_ensembler(cfg);
    cmd_eval(cfg);
    if (s.ens.p >= 2) cmd_ablate(cfg);
    cmd_report(cfg);
    return;
  }
  fail(ErrorCode::invalid_argument, "unknown stage: " + stage);
}

}  // namespace xaiens::pipeline
