// SPDX-License-Identifier: Apache-2.0
#include "xaiens/ensembler.hpp"

#include <algorithm>
#include <cmath>

#include "xaiens/checkpoint.hpp"

namespace xaiens::ensembler {

FusionMode fusion_from_name(const std::string& name) {
  if (name == "concat") return FusionMode::concat;
  if (name == "sum") return FusionMode::sum;
  if (name == "channel") return FusionMode::channel;
  fail(ErrorCode::invalid_argument, "unknown fusion mode: " + name);
}

const char* fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::concat: return "concat";
    case FusionMode::sum: return "sum";
    case FusionMode::channel: return "channel";
  }
  return "?";
}

void EnsemblerConfig::validate() const {
  require(p >= 1, ErrorCode::invalid_argument, "ensembler: p must be >= 1");
  require(cutoff > 0.f && cutoff < 1.f, ErrorCode::invalid_argument,
          "ensembler: cutoff must be in (0,1)");
  require(width_scale > 0.0, ErrorCode::invalid_argument,
          "ensembler: width_scale must be positive");
  require(encoder_stages == 4, ErrorCode::invalid_argument,
          "ensembler: encoder_stages is fixed at 4");
  require(input_side >= 32 && input_side % 32 == 0, ErrorCode::invalid_argument,
          "ensembler: input_side must be a positive multiple of 32");
}

std::string EnsemblerConfig::digest() const {
  std::string s = std::string(fusion_name(fusion)) + ";p=" + std::to_string(p) +
                  ";w=" + format_double(width_scale) +
                  ";cut=" + format_double(cutoff) +
                  ";side=" + std::to_string(input_side);
  return hex64(fnv1a64(s));
}

std::vector<uint8_t> binarize(const Tensor& values, float cutoff) {
  require(cutoff > 0.f && cutoff < 1.f, ErrorCode::invalid_argument,
          "binarize: cutoff must be in (0,1)");
  std::vector<uint8_t> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] > cutoff ? 1 : 0;
  return out;
}

ExplanationSet disable_input(const ExplanationSet& set, int j) {
  require(j >= 0 && j < set.p(), ErrorCode::invalid_argument,
          "disable_input: index out of range");
  ExplanationSet out = set;
  out.maps[static_cast<size_t>(j)].values.fill(0.f);
  return out;
}

namespace {
int scaled(int full, double width_scale) {
  return std::max(4, static_cast<int>(std::lround(full * width_scale)));
}
}  // namespace

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

EnsemblerModel::ResidualBlock::ResidualBlock(int in_ch, int out_ch, int stride,
                                             Rng& rng)
    : conv1(in_ch, out_ch, 3, stride, 1, rng),
      conv2(out_ch, out_ch, 3, 1, 1, rng),
      bn1(out_ch),
      bn2(out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    has_projection = true;
    proj = nn::Conv2d(in_ch, out_ch, 1, stride, 0, rng);
    proj_bn = nn::BatchNorm2d(out_ch);
  }
}

nn::Var EnsemblerModel::ResidualBlock::operator()(const nn::Var& x, bool training) {
  nn::Var h = nn::relu(bn1(conv1(x), training));
  h = bn2(conv2(h), training);
  nn::Var skip = has_projection ? proj_bn(proj(x), training) : x;
  return nn::relu(nn::add(h, skip));
}

void EnsemblerModel::ResidualBlock::collect(const std::string& prefix,
                                            std::vector<nn::Param>& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  if (has_projection) {
    proj.collect(prefix + ".proj", out);
    proj_bn.collect(prefix + ".proj_bn", out);
  }
}

void EnsemblerModel::ResidualBlock::collect_buffers(
    const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out) {
  bn1.collect_buffers(prefix + ".bn1", out);
  bn2.collect_buffers(prefix + ".bn2", out);
  if (has_projection) proj_bn.collect_buffers(prefix + ".proj_bn", out);
}

EnsemblerModel::Encoder::Encoder(int in_ch, int base, Rng& rng)
    : stem(in_ch, base, 7, 2, 3, rng), stem_bn(base) {
  int ch = base;
  for (int stage = 0; stage < 4; ++stage) {
    const int out_ch = base << stage;
    blocks.emplace_back(ch, out_ch, stage == 0 ? 1 : 2, rng);
    blocks.emplace_back(out_ch, out_ch, 1, rng);
    ch = out_ch;
  }
}

std::vector<nn::Var> EnsemblerModel::Encoder::operator()(const nn::Var& x,
                                                         bool training) {
  nn::Var h = nn::relu(stem_bn(stem(x), training));
  h = nn::maxpool2d(h, 3, 2, 1);
  std::vector<nn::Var> stages;
  for (int stage = 0; stage < 4; ++stage) {
    h = blocks[static_cast<size_t>(2 * stage)](h, training);
    h = blocks[static_cast<size_t>(2 * stage + 1)](h, training);
    stages.push_back(h);
  }
  return stages;
}

void EnsemblerModel::Encoder::collect(const std::string& prefix,
                                      std::vector<nn::Param>& out) {
  stem.collect(prefix + ".stem", out);
  stem_bn.collect(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

void EnsemblerModel::Encoder::collect_buffers(
    const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out) {
  stem_bn.collect_buffers(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect_buffers(prefix + ".block" + std::to_string(i), out);
}

// Cascaded dilation branches 1 / 1,3 / 1,3,5 / 1,3,5 + 1x1, summed onto the
// input.
EnsemblerModel::DacBlock::DacBlock(int ch, Rng& rng)
    : dilate1(ch, ch, 3, 1, 1, rng, 1),
      dilate3(ch, ch, 3, 1, 3, rng, 3),
      dilate5(ch, ch, 3, 1, 5, rng, 5),
      conv1x1(ch, ch, 1, 1, 0, rng) {}

nn::Var EnsemblerModel::DacBlock::operator()(const nn::Var& x) {
  nn::Var c1 = dilate1(x);
  nn::Var c2 = dilate3(c1);
  nn::Var c3 = dilate5(c2);
  nn::Var out = nn::add(x, nn::relu(c1));
  out = nn::add(out, nn::relu(c2));
  out = nn::add(out, nn::relu(c3));
  out = nn::add(out, nn::relu(conv1x1(c3)));
  return out;
}

void EnsemblerModel::DacBlock::collect(const std::string& prefix,
                                       std::vector<nn::Param>& out) {
  dilate1.collect(prefix + ".dilate1", out);
  dilate3.collect(prefix + ".dilate3", out);
  dilate5.collect(prefix + ".dilate5", out);
  conv1x1.collect(prefix + ".conv1x1", out);
}

EnsemblerModel::RmpBlock::RmpBlock(int ch, Rng& rng) {
  for (auto& r : reduce) r = nn::Conv2d(ch, 1, 1, 1, 0, rng);
}

nn::Var EnsemblerModel::RmpBlock::operator()(const nn::Var& x) {
  static constexpr int kKernels[4] = {2, 3, 5, 6};
  const int H = x.value().dim(2), W = x.value().dim(3);
  std::vector<nn::Var> parts{x};
  for (int i = 0; i < 4; ++i) {
    const int k = std::min({kKernels[i], H, W});
    nn::Var pooled = nn::maxpool2d(x, k, k, 0);
    nn::Var squeezed = reduce[i](pooled);
    parts.push_back(nn::upsample_bilinear(squeezed, H, W));
  }
  return nn::concat_channels(parts);
}

void EnsemblerModel::RmpBlock::collect(const std::string& prefix,
                                       std::vector<nn::Param>& out) {
  for (int i = 0; i < 4; ++i)
    reduce[i].collect(prefix + ".reduce" + std::to_string(i), out);
}

EnsemblerModel::DecoderBlock::DecoderBlock(int in_ch, int out_ch, Rng& rng) {
  const int mid = std::max(1, in_ch / 4);
  reduce = nn::Conv2d(in_ch, mid, 1, 1, 0, rng);
  bn1 = nn::BatchNorm2d(mid);
  deconv = nn::ConvTranspose2d(mid, mid, 3, 2, 1, 1, rng);
  bn2 = nn::BatchNorm2d(mid);
  expand = nn::Conv2d(mid, out_ch, 1, 1, 0, rng);
  bn3 = nn::BatchNorm2d(out_ch);
}

nn::Var EnsemblerModel::DecoderBlock::operator()(const nn::Var& x, bool training) {
  nn::Var h = nn::relu(bn1(reduce(x), training));
  h = nn::relu(bn2(deconv(h), training));
  return nn::relu(bn3(expand(h), training));
}

void EnsemblerModel::DecoderBlock::collect(const std::string& prefix,
                                           std::vector<nn::Param>& out) {
  reduce.collect(prefix + ".reduce", out);
  bn1.collect(prefix + ".bn1", out);
  deconv.collect(prefix + ".deconv", out);
  bn2.collect(prefix + ".bn2", out);
  expand.collect(prefix + ".expand", out);
  bn3.collect(prefix + ".bn3", out);
}

void EnsemblerModel::DecoderBlock::collect_buffers(
    const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out) {
  bn1.collect_buffers(prefix + ".bn1", out);
  bn2.collect_buffers(prefix + ".bn2", out);
  bn3.collect_buffers(prefix + ".bn3", out);
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

EnsemblerModel::EnsemblerModel(const EnsemblerConfig& cfg, uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {"ensembler"}));
  const int base = scaled(64, cfg_.width_scale);

  if (cfg_.fusion == FusionMode::channel) {
    encoders_.emplace_back(3 * cfg_.p, base, rng);
  } else {
    for (int e = 0; e < cfg_.p; ++e) encoders_.emplace_back(3, base, rng);
  }
  if (cfg_.fusion == FusionMode::concat) {
    for (int stage = 0; stage < 4; ++stage) {
      const int ch = base << stage;
      fusion_proj_.emplace_back(cfg_.p * ch, ch, 1, 1, 0, rng);
    }
  }
  const int c4 = base << 3;
  dac_ = DacBlock(c4, rng);
  rmp_ = RmpBlock(c4, rng);
  dec_[0] = DecoderBlock(c4 + 4, base << 2, rng);  // bottleneck -> C3
  dec_[1] = DecoderBlock(base << 2, base << 1, rng);
  dec_[2] = DecoderBlock(base << 1, base, rng);
  dec_[3] = DecoderBlock(base, base, rng);
  const int head_mid = std::max(1, base / 2);
  head_deconv_ = nn::ConvTranspose2d(base, head_mid, 4, 2, 1, 0, rng);
  head_conv_ = nn::Conv2d(head_mid, 1, 3, 1, 1, rng);
}

nn::Var EnsemblerModel::fuse_stage(
    const std::vector<std::vector<nn::Var>>& stage_outputs, int stage) {
  if (cfg_.fusion == FusionMode::channel) return stage_outputs[0][static_cast<size_t>(stage)];
  if (cfg_.fusion == FusionMode::sum) {
    nn::Var acc = stage_outputs[0][static_cast<size_t>(stage)];
    for (size_t e = 1; e < stage_outputs.size(); ++e)
      acc = nn::add(acc, stage_outputs[e][static_cast<size_t>(stage)]);
    return acc;
  }
  std::vector<nn::Var> parts;
  parts.reserve(stage_outputs.size());
  for (const auto& enc : stage_outputs) parts.push_back(enc[static_cast<size_t>(stage)]);
  return fusion_proj_[static_cast<size_t>(stage)](nn::concat_channels(parts));
}

nn::Var EnsemblerModel::forward_graph(const std::vector<Tensor>& inputs,
                                      bool training) {
  const size_t expected = cfg_.fusion == FusionMode::channel
                              ? 1
                              : static_cast<size_t>(cfg_.p);
  require(inputs.size() == expected, ErrorCode::invalid_argument,
          "ensembler: wrong number of input tensors");
  const int expect_ch = cfg_.fusion == FusionMode::channel ? 3 * cfg_.p : 3;
  for (const auto& t : inputs) {
    require(t.ndim() == 4 && t.dim(1) == expect_ch && t.dim(2) == cfg_.input_side &&
                t.dim(3) == cfg_.input_side,
            ErrorCode::invalid_argument, "ensembler: bad input tensor shape");
    require(t.dim(0) == inputs[0].dim(0), ErrorCode::invalid_argument,
            "ensembler: batch size mismatch across inputs");
  }

  std::vector<std::vector<nn::Var>> stage_outputs;
  for (size_t e = 0; e < encoders_.size(); ++e)
    stage_outputs.push_back(encoders_[e](nn::Var(inputs[e]), training));

  nn::Var f4 = fuse_stage(stage_outputs, 3);
  nn::Var bottleneck = rmp_(dac_(f4));

  nn::Var d = dec_[0](bottleneck, training);
  d = nn::add(d, fuse_stage(stage_outputs, 2));
  d = dec_[1](d, training);
  d = nn::add(d, fuse_stage(stage_outputs, 1));
  d = dec_[2](d, training);
  d = nn::add(d, fuse_stage(stage_outputs, 0));
  d = dec_[3](d, training);

  nn::Var h = nn::relu(head_deconv_(d));
  return nn::sigmoid(head_conv_(h));
}

std::vector<Tensor> EnsemblerModel::pack_inputs(
    const std::vector<const ExplanationSet*>& sets) const {
  require(!sets.empty(), ErrorCode::invalid_argument, "pack_inputs: empty batch");
  const int B = static_cast<int>(sets.size());
  const int side = cfg_.input_side;
  for (const auto* s : sets) {
    require(s->p() == cfg_.p, ErrorCode::invalid_argument,
            "explanation set p does not match the model");
    for (const auto& m : s->maps)
      require(m.values.dim(1) == side && m.values.dim(2) == side,
              ErrorCode::invalid_argument, "explanation map side mismatch");
  }
  const size_t plane = static_cast<size_t>(side) * side;
  if (cfg_.fusion == FusionMode::channel) {
    Tensor big({B, 3 * cfg_.p, side, side});
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < cfg_.p; ++j) {
        const Tensor& v = sets[static_cast<size_t>(b)]->maps[static_cast<size_t>(j)].values;
        std::copy(v.data(), v.data() + 3 * plane,
                  big.data() + ((static_cast<size_t>(b) * 3 * cfg_.p) + 3 * j) * plane);
      }
    return {std::move(big)};
  }
  std::vector<Tensor> out;
  for (int j = 0; j < cfg_.p; ++j) {
    Tensor slot({B, 3, side, side});
    for (int b = 0; b < B; ++b) {
      const Tensor& v = sets[static_cast<size_t>(b)]->maps[static_cast<size_t>(j)].values;
      std::copy(v.data(), v.data() + 3 * plane,
                slot.data() + static_cast<size_t>(b) * 3 * plane);
    }
    out.push_back(std::move(slot));
  }
  return out;
}

EnsembledExplanation EnsemblerModel::forward(const ExplanationSet& set) {
  const auto inputs = pack_inputs({&set});
  nn::Var out = forward_graph(inputs, false);
  const int side = cfg_.input_side;
  EnsembledExplanation result;
  result.values = Tensor({side, side});
  std::copy(out.value().data(), out.value().data() + result.values.size(),
            result.values.data());
  result.binary = binarize(result.values, cfg_.cutoff);
  return result;
}

std::vector<nn::Param> EnsemblerModel::parameters() {
  std::vector<nn::Param> out;
  for (size_t e = 0; e < encoders_.size(); ++e)
    encoders_[e].collect("enc" + std::to_string(e), out);
  for (size_t s = 0; s < fusion_proj_.size(); ++s)
    fusion_proj_[s].collect("fuse.stage" + std::to_string(s), out);
  dac_.collect("dac", out);
  rmp_.collect("rmp", out);
  for (int i = 0; i < 4; ++i) dec_[i].collect("dec" + std::to_string(i), out);
  head_deconv_.collect("head.deconv", out);
  head_conv_.collect("head.conv", out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> EnsemblerModel::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t e = 0; e < encoders_.size(); ++e)
    encoders_[e].collect_buffers("enc" + std::to_string(e), out);
  for (int i = 0; i < 4; ++i) dec_[i].collect_buffers("dec" + std::to_string(i), out);
  return out;
}

size_t EnsemblerModel::count_parameters() {
  return nn::count_scalars(parameters());
}

ParameterCounts EnsemblerModel::parameter_counts() {
  ParameterCounts counts;
  for (const auto& p : parameters()) {
    const size_t n = p.var.value().size();
    if (p.name.rfind("enc", 0) == 0)
      counts.encoders += n;
    else if (p.name.rfind("fuse", 0) == 0)
      counts.fusion += n;
    else if (p.name.rfind("dac", 0) == 0 || p.name.rfind("rmp", 0) == 0)
      counts.bottleneck += n;
    else if (p.name.rfind("dec", 0) == 0)
      counts.decoder += n;
    else
      counts.head += n;
  }
  return counts;
}

std::string EnsemblerModel::to_bytes(const nlohmann::json& training_state) const {
  auto* self = const_cast<EnsemblerModel*>(this);
  nlohmann::json meta;
  meta["kind"] = "ensembler";
  meta["fusion"] = fusion_name(cfg_.fusion);
  meta["p"] = cfg_.p;
  meta["width_scale"] = cfg_.width_scale;
  meta["cutoff"] = cfg_.cutoff;
  meta["input_side"] = cfg_.input_side;
  meta["seed"] = seed_;
  meta["config_digest"] = cfg_.digest();
  if (!training_state.is_null() && !training_state.empty())
    meta["training_state"] = training_state;

  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (auto& p : self->parameters()) arrays.emplace_back(p.name, &p.var.value());
  for (auto& [name, t] : self->buffers()) arrays.emplace_back(name, t);
  return ckpt::blob_to_bytes(meta, arrays);
}

std::unique_ptr<EnsemblerModel> EnsemblerModel::from_bytes(
    const std::string& bytes, nlohmann::json* training_state) {
  auto blob = ckpt::blob_from_bytes(bytes, "ensembler checkpoint");
  require(blob.meta.value("kind", "") == "ensembler", ErrorCode::io,
          "not an ensembler checkpoint");
  EnsemblerConfig cfg;
  cfg.fusion = fusion_from_name(blob.meta["fusion"].get<std::string>());
  cfg.p = blob.meta["p"].get<int>();
  cfg.width_scale = blob.meta["width_scale"].get<double>();
  cfg.cutoff = blob.meta["cutoff"].get<float>();
  cfg.input_side = blob.meta["input_side"].get<int>();
  auto model = std::make_unique<EnsemblerModel>(cfg, blob.meta["seed"].get<uint64_t>());
  for (auto& p : model->parameters()) {
    const Tensor& src = blob.array(p.name);
    require(src.same_shape(p.var.value()), ErrorCode::io,
            "checkpoint shape mismatch for " + p.name);
    p.var.value() = src;
  }
  for (auto& [name, t] : model->buffers()) *t = blob.array(name);
  if (training_state)
    *training_state = blob.meta.value("training_state", nlohmann::json::object());
  return model;
}

void EnsemblerModel::save(const std::filesystem::path& path,
                          const nlohmann::json& training_state) const {
  ckpt::write_file(path, to_bytes(training_state));
}

std::unique_ptr<EnsemblerModel> EnsemblerModel::load(
    const std::filesystem::path& path, nlohmann::json* training_state) {
  return from_bytes(ckpt::read_file(path), training_state);
}

std::string EnsemblerModel::digest() const {
  return ckpt::digest_of(to_bytes());
}

}  // namespace xaiens::ensembler
