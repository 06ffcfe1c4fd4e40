// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "xaiens/data.hpp"
#include "xaiens/nn.hpp"
#include "xaiens/tensor.hpp"

namespace xaiens {

// Classification model handle used by explainers and quality metrics.
// Forward passes are deterministic in evaluation mode; mutation is limited
// to explicit parameter access (cloned copies for randomization studies).
class Classifier {
 public:
  struct LayerRef {
    std::string name;
    std::vector<Tensor*> params;
  };

  virtual ~Classifier() = default;

  virtual int num_classes() const = 0;
  /// Raw class scores for a batch. images [N,3,H,W] -> [N,num_classes].
  virtual Tensor forward(const Tensor& images) = 0;
  /// d score[target] / d input per image; guided applies the clamped-gradient
  /// ReLU rule on a per-call basis without touching shared state.
  virtual Tensor input_gradients(const Tensor& images, int target, bool guided) = 0;
  /// Last-conv activations [C,h,w] and gradients of score[target] w.r.t.
  /// them, for one [3,H,W] image. Returns false when the model has no
  /// convolutional feature map (e.g. linear scorers).
  virtual bool gradcam(const Tensor& image, int target, Tensor& activations,
                       Tensor& gradients) = 0;
  /// Parameterized layers ordered input-to-output.
  virtual std::vector<LayerRef> layers() = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;
  /// Content hash over architecture and parameters.
  virtual std::string digest() const = 0;
};

/// Softmax over a raw score row.
std::vector<double> softmax(const Tensor& scores, int row);

// Linear scorer: score_c(x) = w_c . x + b_c over the flattened image.
// Closed-form gradients make it the oracle model for explainer tests.
class LinearClassifier : public Classifier {
 public:
  LinearClassifier(Tensor weight /*[C, 3*H*W]*/, Tensor bias /*[C]*/, int side);

  int num_classes() const override { return weight_.dim(0); }
  Tensor forward(const Tensor& images) override;
  Tensor input_gradients(const Tensor& images, int target, bool guided) override;
  bool gradcam(const Tensor&, int, Tensor&, Tensor&) override { return false; }
  std::vector<LayerRef> layers() override;
  std::unique_ptr<Classifier> clone() const override;
  std::string digest() const override;

 private:
  Tensor weight_, bias_;
  int side_;
};

// Small convolutional classifier: four conv-BN-ReLU-maxpool blocks and a
// linear head. Desk-scale stand-in exposing everything explainers need.
class ToyCnnClassifier : public Classifier {
 public:
  ToyCnnClassifier(int side, int num_classes, int base_channels, uint64_t seed);

  int num_classes() const override { return num_classes_; }
  int input_side() const { return side_; }
  Tensor forward(const Tensor& images) override;
  Tensor input_gradients(const Tensor& images, int target, bool guided) override;
  bool gradcam(const Tensor& image, int target, Tensor& activations,
               Tensor& gradients) override;
  std::vector<LayerRef> layers() override;
  std::unique_ptr<Classifier> clone() const override;
  std::string digest() const override;

  std::vector<nn::Param> parameters();
  /// Training-mode graph (batch-norm batch statistics, running stat updates).
  nn::Var train_graph(const Tensor& images);

  std::string to_bytes() const;
  static std::unique_ptr<ToyCnnClassifier> from_bytes(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ToyCnnClassifier> load(const std::filesystem::path& path);

 private:
  nn::Var graph(const Tensor& images, bool training, bool guided,
                nn::Var* input_out, nn::Var* lastconv_out);

  int side_, num_classes_, base_;
  uint64_t seed_;
  nn::Conv2d conv_[4];
  nn::BatchNorm2d bn_[4];
  nn::Linear fc_;
};

struct ClassifierTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 0;
  data::AugmentConfig augment;
  bool use_augmentation = true;
};

struct ClassifierTrainResult {
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Trains on the dataset's train split; reports accuracy on both splits.
/// Images are normalized with the augment config's constants.
ClassifierTrainResult train_toy_classifier(ToyCnnClassifier& model,
                                           const Dataset& dataset,
                                           const ClassifierTrainConfig& cfg);

/// Accuracy of the model on one split (eval mode, normalization only).
double classifier_accuracy(Classifier& model, const Dataset& dataset, Split split,
                           const data::AugmentConfig& norm);

}  // namespace xaiens
