// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaiens/explainers.hpp"
#include "xaiens/nn.hpp"

namespace xaiens::ensembler {

enum class FusionMode { concat, sum, channel };

FusionMode fusion_from_name(const std::string& name);
const char* fusion_name(FusionMode mode);

struct EnsemblerConfig {
  FusionMode fusion = FusionMode::concat;
  int p = 1;                  // number of input explanations
  double width_scale = 0.25;  // channel multiplier, 1.0 = full scale
  int encoder_stages = 4;
  float cutoff = 0.5f;
  int input_side = 64;

  void validate() const;
  std::string digest() const;
};

struct EnsembledExplanation {
  Tensor values;                // [H, W] in [0,1]
  std::vector<uint8_t> binary;  // values > cutoff
};

/// Strictly-above thresholding: 1 where value > cutoff, else 0.
std::vector<uint8_t> binarize(const Tensor& values, float cutoff);

/// Copy of the set with map j replaced by an all-zero map of equal shape.
ExplanationSet disable_input(const ExplanationSet& set, int j);

struct ParameterCounts {
  size_t encoders = 0;
  size_t fusion = 0;
  size_t bottleneck = 0;
  size_t decoder = 0;
  size_t head = 0;
  size_t total() const { return encoders + fusion + bottleneck + decoder + head; }
};

// Encoder-decoder explanation-fusion network. Concat and sum modes build one
// encoder per explanation; channel mode builds a single encoder over 3*p
// input channels. Per-stage encoder outputs feed decoder sum nodes through
// the mode's fusion rule; a dense-atrous-convolution block and residual
// multi-kernel pooling sit at the bottleneck.
class EnsemblerModel {
 public:
  EnsemblerModel(const EnsemblerConfig& cfg, uint64_t seed);

  const EnsemblerConfig& config() const { return cfg_; }

  /// Evaluation-mode forward of one explanation set.
  EnsembledExplanation forward(const ExplanationSet& set);

  /// Training/eval graph over a batch. For concat/sum modes inputs holds p
  /// tensors of [B,3,H,W]; channel mode takes one [B,3p,H,W] tensor.
  nn::Var forward_graph(const std::vector<Tensor>& inputs, bool training);

  /// Packs explanation sets into forward_graph's expected input layout.
  std::vector<Tensor> pack_inputs(const std::vector<const ExplanationSet*>& sets) const;

  std::vector<nn::Param> parameters();
  size_t count_parameters();
  ParameterCounts parameter_counts();

  std::string to_bytes(const nlohmann::json& training_state = {}) const;
  static std::unique_ptr<EnsemblerModel> from_bytes(const std::string& bytes,
                                                    nlohmann::json* training_state = nullptr);
  void save(const std::filesystem::path& path,
            const nlohmann::json& training_state = {}) const;
  static std::unique_ptr<EnsemblerModel> load(const std::filesystem::path& path,
                                              nlohmann::json* training_state = nullptr);
  std::string digest() const;

 private:
  struct ResidualBlock {
    nn::Conv2d conv1, conv2;
    nn::BatchNorm2d bn1, bn2;
    bool has_projection = false;
    nn::Conv2d proj;
    nn::BatchNorm2d proj_bn;

    ResidualBlock() = default;
    ResidualBlock(int in_ch, int out_ch, int stride, Rng& rng);
    nn::Var operator()(const nn::Var& x, bool training);
    void collect(const std::string& prefix, std::vector<nn::Param>& out);
    void collect_buffers(const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor*>>& out);
  };

  struct Encoder {
    nn::Conv2d stem;
    nn::BatchNorm2d stem_bn;
    std::vector<ResidualBlock> blocks;  // 2 per stage

    Encoder() = default;
    Encoder(int in_ch, int base, Rng& rng);
    /// Returns the four stage outputs.
    std::vector<nn::Var> operator()(const nn::Var& x, bool training);
    void collect(const std::string& prefix, std::vector<nn::Param>& out);
    void collect_buffers(const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor*>>& out);
  };

  struct DacBlock {
    nn::Conv2d dilate1, dilate3, dilate5, conv1x1;

    DacBlock() = default;
    DacBlock(int ch, Rng& rng);
    nn::Var operator()(const nn::Var& x);
    void collect(const std::string& prefix, std::vector<nn::Param>& out);
  };

  struct RmpBlock {
    nn::Conv2d reduce[4];  // one 1x1 conv per pooling scale

    RmpBlock() = default;
    RmpBlock(int ch, Rng& rng);
    nn::Var operator()(const nn::Var& x);
    void collect(const std::string& prefix, std::vector<nn::Param>& out);
  };

  struct DecoderBlock {
    nn::Conv2d reduce, expand;
    nn::ConvTranspose2d deconv;
    nn::BatchNorm2d bn1, bn2, bn3;

    DecoderBlock() = default;
    DecoderBlock(int in_ch, int out_ch, Rng& rng);
    nn::Var operator()(const nn::Var& x, bool training);
    void collect(const std::string& prefix, std::vector<nn::Param>& out);
    void collect_buffers(const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor*>>& out);
  };

  nn::Var fuse_stage(const std::vector<std::vector<nn::Var>>& stage_outputs,
                     int stage);

  EnsemblerConfig cfg_;
  uint64_t seed_;
  std::vector<Encoder> encoders_;
  std::vector<nn::Conv2d> fusion_proj_;  // concat mode, one per stage
  DacBlock dac_;
  RmpBlock rmp_;
  DecoderBlock dec_[4];
  nn::ConvTranspose2d head_deconv_;
  nn::Conv2d head_conv_;

  std::vector<std::pair<std::string, Tensor*>> buffers();
};

}  // namespace xaiens::ensembler
