// SPDX-License-Identifier: Apache-2.0
#include "xaiens/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "xaiens/checkpoint.hpp"

namespace xaiens {

std::vector<double> softmax(const Tensor& scores, int row) {
  const int C = scores.dim(1);
  std::vector<double> out(static_cast<size_t>(C));
  double m = scores.at(row, 0);
  for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(scores.at(row, c)));
  double z = 0.0;
  for (int c = 0; c < C; ++c) {
    out[static_cast<size_t>(c)] = std::exp(static_cast<double>(scores.at(row, c)) - m);
    z += out[static_cast<size_t>(c)];
  }
  for (auto& v : out) v /= z;
  return out;
}

// ---------------------------------------------------------------------------
// LinearClassifier
// ---------------------------------------------------------------------------

LinearClassifier::LinearClassifier(Tensor weight, Tensor bias, int side)
    : weight_(std::move(weight)), bias_(std::move(bias)), side_(side) {
  require(weight_.ndim() == 2 && bias_.ndim() == 1 &&
              weight_.dim(0) == bias_.dim(0),
          ErrorCode::invalid_argument, "linear classifier: bad shapes");
  require(weight_.dim(1) == 3 * side * side, ErrorCode::invalid_argument,
          "linear classifier: weight width != 3*side*side");
}

Tensor LinearClassifier::forward(const Tensor& images) {
  require(images.ndim() == 4, ErrorCode::invalid_argument, "forward: NCHW expected");
  const int N = images.dim(0);
  const int F = weight_.dim(1);
  require(static_cast<int>(images.size()) / N == F, ErrorCode::invalid_argument,
          "forward: image size mismatch");
  const int C = weight_.dim(0);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n) {
    const float* x = images.data() + static_cast<size_t>(n) * F;
    for (int c = 0; c < C; ++c) {
      const float* w = weight_.data() + static_cast<size_t>(c) * F;
      double acc = bias_[c];
      for (int i = 0; i < F; ++i) acc += static_cast<double>(w[i]) * x[i];
      out.at(n, c) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor LinearClassifier::input_gradients(const Tensor& images, int target, bool) {
  require(target >= 0 && target < num_classes(), ErrorCode::invalid_argument,
          "target out of range");
  const int N = images.dim(0);
  const int F = weight_.dim(1);
  Tensor out({N, 3, side_, side_});
  for (int n = 0; n < N; ++n)
    std::copy(weight_.data() + static_cast<size_t>(target) * F,
              weight_.data() + static_cast<size_t>(target + 1) * F,
              out.data() + static_cast<size_t>(n) * F);
  return out;
}

std::vector<Classifier::LayerRef> LinearClassifier::layers() {
  return {{"linear", {&weight_, &bias_}}};
}

std::unique_ptr<Classifier> LinearClassifier::clone() const {
  return std::make_unique<LinearClassifier>(weight_, bias_, side_);
}

std::string LinearClassifier::digest() const {
  uint64_t h = fnv1a64("linear");
  h = fnv1a64_bytes(weight_.data(), weight_.size() * sizeof(float), h);
  h = fnv1a64_bytes(bias_.data(), bias_.size() * sizeof(float), h);
  return hex64(h);
}

// ---------------------------------------------------------------------------
// ToyCnnClassifier
// ---------------------------------------------------------------------------

namespace {
int toy_channels(int base, int block) { return base << block; }  // base * 2^block
}

ToyCnnClassifier::ToyCnnClassifier(int side, int num_classes, int base_channels,
                                   uint64_t seed)
    : side_(side), num_classes_(num_classes), base_(base_channels), seed_(seed) {
  require(side >= 16 && side % 16 == 0, ErrorCode::invalid_argument,
          "toy classifier: side must be a positive multiple of 16");
  Rng rng(derive_seed(seed, {"toycnn"}));
  int in_ch = 3;
  for (int b = 0; b < 4; ++b) {
    const int out_ch = toy_channels(base_channels, b);
    conv_[b] = nn::Conv2d(in_ch, out_ch, 3, 1, 1, rng);
    bn_[b] = nn::BatchNorm2d(out_ch);
    in_ch = out_ch;
  }
  fc_ = nn::Linear(toy_channels(base_channels, 3), num_classes, rng);
}

nn::Var ToyCnnClassifier::graph(const Tensor& images, bool training, bool guided,
                                nn::Var* input_out, nn::Var* lastconv_out) {
  require(images.ndim() == 4 && images.dim(1) == 3 && images.dim(2) == side_ &&
              images.dim(3) == side_,
          ErrorCode::invalid_argument, "toy classifier: bad input shape");
  nn::Var x(images, input_out != nullptr);
  if (input_out) *input_out = x;
  nn::Var h = x;
  for (int b = 0; b < 4; ++b) {
    h = conv_[b](h);
    h = bn_[b](h, training);
    h = nn::relu(h, guided);
    if (b == 3 && lastconv_out) *lastconv_out = h;
    h = nn::maxpool2d(h, 2, 2, 0);
  }
  return fc_(nn::global_avg_pool(h));
}

Tensor ToyCnnClassifier::forward(const Tensor& images) {
  return graph(images, false, false, nullptr, nullptr).value();
}

Tensor ToyCnnClassifier::input_gradients(const Tensor& images, int target,
                                         bool guided) {
  require(target >= 0 && target < num_classes_, ErrorCode::invalid_argument,
          "target out of range");
  nn::Var input;
  nn::Var logits = graph(images, false, guided, &input, nullptr);
  nn::backward(nn::column_sum(logits, target));
  return input.grad();
}

bool ToyCnnClassifier::gradcam(const Tensor& image, int target,
                               Tensor& activations, Tensor& gradients) {
  require(image.ndim() == 3, ErrorCode::invalid_argument, "gradcam: CHW image");
  require(target >= 0 && target < num_classes_, ErrorCode::invalid_argument,
          "target out of range");
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), batch.data());
  nn::Var input, lastconv;
  nn::Var logits = graph(batch, false, false, &input, &lastconv);
  nn::backward(nn::column_sum(logits, target));

  const Tensor& av = lastconv.value();
  const Tensor& gv = lastconv.grad();
  const int C = av.dim(1), h = av.dim(2), w = av.dim(3);
  activations = Tensor({C, h, w});
  gradients = Tensor({C, h, w});
  std::copy(av.data(), av.data() + activations.size(), activations.data());
  std::copy(gv.data(), gv.data() + gradients.size(), gradients.data());
  return true;
}

std::vector<Classifier::LayerRef> ToyCnnClassifier::layers() {
  std::vector<LayerRef> out;
  for (int b = 0; b < 4; ++b)
    out.push_back({"conv" + std::to_string(b + 1),
                   {&conv_[b].weight.value(), &conv_[b].bias.value()}});
  out.push_back({"fc", {&fc_.weight.value(), &fc_.bias.value()}});
  return out;
}

std::vector<nn::Param> ToyCnnClassifier::parameters() {
  std::vector<nn::Param> out;
  for (int b = 0; b < 4; ++b) {
    conv_[b].collect("conv" + std::to_string(b + 1), out);
    bn_[b].collect("bn" + std::to_string(b + 1), out);
  }
  fc_.collect("fc", out);
  return out;
}

nn::Var ToyCnnClassifier::train_graph(const Tensor& images) {
  return graph(images, true, false, nullptr, nullptr);
}

std::string ToyCnnClassifier::to_bytes() const {
  auto* self = const_cast<ToyCnnClassifier*>(this);
  nlohmann::json meta;
  meta["kind"] = "toy_cnn";
  meta["side"] = side_;
  meta["num_classes"] = num_classes_;
  meta["base_channels"] = base_;
  meta["seed"] = seed_;
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (auto& p : self->parameters()) arrays.emplace_back(p.name, &p.var.value());
  std::vector<std::pair<std::string, Tensor*>> buffers;
  for (int b = 0; b < 4; ++b)
    self->bn_[b].collect_buffers("bn" + std::to_string(b + 1), buffers);
  for (auto& [name, t] : buffers) arrays.emplace_back(name, t);
  return ckpt::blob_to_bytes(meta, arrays);
}

std::unique_ptr<ToyCnnClassifier> ToyCnnClassifier::from_bytes(const std::string& bytes) {
  auto blob = ckpt::blob_from_bytes(bytes, "toy classifier checkpoint");
  require(blob.meta.value("kind", "") == "toy_cnn", ErrorCode::io,
          "not a toy classifier checkpoint");
  auto model = std::make_unique<ToyCnnClassifier>(
      blob.meta["side"].get<int>(), blob.meta["num_classes"].get<int>(),
      blob.meta["base_channels"].get<int>(), blob.meta["seed"].get<uint64_t>());
  for (auto& p : model->parameters()) {
    const Tensor& src = blob.array(p.name);
    require(src.same_shape(p.var.value()), ErrorCode::io,
            "checkpoint shape mismatch for " + p.name);
    p.var.value() = src;
  }
  std::vector<std::pair<std::string, Tensor*>> buffers;
  for (int b = 0; b < 4; ++b)
    model->bn_[b].collect_buffers("bn" + std::to_string(b + 1), buffers);
  for (auto& [name, t] : buffers) *t = blob.array(name);
  return model;
}

void ToyCnnClassifier::save(const std::filesystem::path& path) const {
  ckpt::write_file(path, to_bytes());
}

std::unique_ptr<ToyCnnClassifier> ToyCnnClassifier::load(
    const std::filesystem::path& path) {
  return from_bytes(ckpt::read_file(path));
}

std::unique_ptr<Classifier> ToyCnnClassifier::clone() const {
  return from_bytes(to_bytes());
}

std::string ToyCnnClassifier::digest() const {
  const std::string bytes = to_bytes();
  return ckpt::digest_of(bytes);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

double classifier_accuracy(Classifier& model, const Dataset& dataset, Split split,
                           const data::AugmentConfig& norm) {
  const auto idx = dataset.split_indices(split);
  require(!idx.empty(), ErrorCode::invalid_argument, "empty split");
  int correct = 0;
  for (int i : idx) {
    const auto& s = dataset.samples[static_cast<size_t>(i)];
    Tensor x = data::normalize_image(s.image, norm.mean, norm.stddev);
    Tensor batch({1, 3, x.dim(1), x.dim(2)});
    std::copy(x.data(), x.data() + x.size(), batch.data());
    const Tensor scores = model.forward(batch);
    int best = 0;
    for (int c = 1; c < scores.dim(1); ++c)
      if (scores.at(0, c) > scores.at(0, best)) best = c;
    if (best == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

ClassifierTrainResult train_toy_classifier(ToyCnnClassifier& model,
                                           const Dataset& dataset,
                                           const ClassifierTrainConfig& cfg) {
  const auto train_idx = dataset.split_indices(Split::train);
  require(!train_idx.empty(), ErrorCode::invalid_argument, "no training samples");

  nn::Adam opt(model.parameters(), cfg.lr);
  ClassifierTrainResult result;
  const int side = model.input_side();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, {"clf-epoch", std::to_string(epoch)}));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const int B = static_cast<int>(end - start);
      Tensor batch({B, 3, side, side});
      std::vector<int> labels(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        const auto& s = dataset.samples[static_cast<size_t>(order[start + static_cast<size_t>(b)])];
        data::AugmentConfig acfg = cfg.augment;
        if (!cfg.use_augmentation) acfg.prob = 0.0;
        const uint64_t aug_seed =
            derive_seed(cfg.seed, {"aug", std::to_string(epoch), s.id});
        ImageSample view = data::augment(s, aug_seed, acfg);
        std::copy(view.image.data(), view.image.data() + view.image.size(),
                  batch.data() + static_cast<size_t>(b) * view.image.size());
        labels[static_cast<size_t>(b)] = s.label;
      }
      opt.zero_grad();
      nn::Var logits = model.train_graph(batch);
      nn::Var loss = nn::softmax_cross_entropy(logits, labels);
      nn::backward(loss);
      require(std::isfinite(loss.value()[0]), ErrorCode::runtime,
              "non-finite classifier loss");
      opt.step();
      epoch_loss += loss.value()[0];
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / std::max(1, batches));
  }

  data::AugmentConfig norm = cfg.augment;
  result.train_accuracy = classifier_accuracy(model, dataset, Split::train, norm);
  result.test_accuracy = classifier_accuracy(model, dataset, Split::test, norm);
  return result;
}

}  // namespace xaiens
