// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "xaiens/ensembler.hpp"

using namespace xaiens;
using namespace xaiens::ensembler;

namespace {

ExplanationSet random_set(int p, int side, uint64_t seed) {
  Rng rng(seed);
  ExplanationSet set;
  set.image_id = "img";
  set.preset = "custom";
  for (int j = 0; j < p; ++j) {
    AttributionMap m;
    m.method = "m" + std::to_string(j);
    m.range = ValueRange::signed_unit;
    m.values = Tensor({3, side, side});
    for (auto& v : m.values.vec()) v = rng.uniformf(-1.f, 1.f);
    set.maps.push_back(std::move(m));
  }
  return set;
}

EnsemblerConfig make_cfg(FusionMode mode, int p, int side = 32,
                         double width = 0.1) {
  EnsemblerConfig cfg;
  cfg.fusion = mode;
  cfg.p = p;
  cfg.width_scale = width;
  cfg.input_side = side;
  return cfg;
}

// Independent structural oracle: expected scalar count for the channel-mode
// single-encoder network, recomputed from layer dimensions.
size_t expected_channel_mode_params(int in_ch, int base) {
  auto conv = [](int cin, int cout, int k) {
    return static_cast<size_t>(cout) * cin * k * k + cout;
  };
  auto bn = [](int ch) { return static_cast<size_t>(2) * ch; };

  size_t total = conv(in_ch, base, 7) + bn(base);  // stem
  for (int stage = 0; stage < 4; ++stage) {
    const int out = base << stage;
    const int in = stage == 0 ? base : base << (stage - 1);
    // first block (projection when shape changes) + identity block
    total += conv(in, out, 3) + bn(out) + conv(out, out, 3) + bn(out);
    if (stage != 0) total += conv(in, out, 1) + bn(out);
    total += 2 * (conv(out, out, 3) + bn(out));
  }
  const int c4 = base << 3;
  total += 3 * conv(c4, c4, 3) + conv(c4, c4, 1);  // DAC cascade
  total += 4 * conv(c4, 1, 1);                     // RMP squeezes
  auto decoder = [&](int in, int out) {
    const int mid = std::max(1, in / 4);
    return conv(in, mid, 1) + bn(mid) + conv(mid, mid, 3) + bn(mid) +
           conv(mid, out, 1) + bn(out);
  };
  total += decoder(c4 + 4, base << 2);
  total += decoder(base << 2, base << 1);
  total += decoder(base << 1, base);
  total += decoder(base, base);
  const int head_mid = std::max(1, base / 2);
  total += conv(base, head_mid, 4) + conv(head_mid, 1, 3);
  return total;
}

}  // namespace

TEST_CASE("all fusion modes build and forward to [0,1] outputs") {
  for (FusionMode mode : {FusionMode::concat, FusionMode::sum, FusionMode::channel}) {
    for (int p : {1, 3, 7}) {
      EnsemblerModel model(make_cfg(mode, p), 42);
      const auto set = random_set(p, 32, 7 + static_cast<uint64_t>(p));
      const EnsembledExplanation out = model.forward(set);
      CHECK(out.values.dims() == std::vector<int>{32, 32});
      CHECK(out.values.min_value() >= 0.f);
      CHECK(out.values.max_value() <= 1.f);
      CHECK(out.binary.size() == out.values.size());

      // Evaluation mode is deterministic.
      const EnsembledExplanation again = model.forward(set);
      CHECK(bitwise_equal(out.values, again.values));
    }
  }
}

TEST_CASE("seeded initialization reproduces the same untrained outputs") {
  const auto set = random_set(3, 32, 5);
  EnsemblerModel a(make_cfg(FusionMode::concat, 3), 1234);
  EnsemblerModel b(make_cfg(FusionMode::concat, 3), 1234);
  CHECK(bitwise_equal(a.forward(set).values, b.forward(set).values));
  EnsemblerModel c(make_cfg(FusionMode::concat, 3), 999);
  CHECK_FALSE(bitwise_equal(a.forward(set).values, c.forward(set).values));
}

TEST_CASE("forward rejects mismatched sets") {
  EnsemblerModel model(make_cfg(FusionMode::sum, 3), 1);
  CHECK_THROWS_AS(model.forward(random_set(2, 32, 1)), Error);    // p mismatch
  CHECK_THROWS_AS(model.forward(random_set(3, 64, 1)), Error);    // side mismatch
  EnsemblerConfig bad = make_cfg(FusionMode::sum, 0);
  CHECK_THROWS_AS(EnsemblerModel(bad, 1), Error);                 // p = 0
  EnsemblerConfig bad_side = make_cfg(FusionMode::sum, 1, 48);
  CHECK_THROWS_AS(EnsemblerModel(bad_side, 1), Error);            // side % 32 != 0
}

TEST_CASE("concat parameter count strictly increases with p") {
  size_t prev = 0;
  for (int p : {1, 2, 3}) {
    EnsemblerModel model(make_cfg(FusionMode::concat, p), 3);
    const size_t count = model.count_parameters();
    CHECK(count > prev);
    prev = count;
  }
}

TEST_CASE("sum/channel bottleneck+decoder+head counts independent of p") {
  for (FusionMode mode : {FusionMode::sum, FusionMode::channel}) {
    size_t reference = 0;
    for (int p : {1, 3, 7}) {
      EnsemblerModel model(make_cfg(mode, p), 3);
      const ParameterCounts counts = model.parameter_counts();
      CHECK(counts.fusion == 0);  // no fusion parameters in these modes
      const size_t tail = counts.bottleneck + counts.decoder + counts.head;
      if (reference == 0)
        reference = tail;
      else
        CHECK(tail == reference);
    }
  }
}

TEST_CASE("channel mode: first layer linear in p, later layers constant") {
  // Only the stem convolution sees 3p channels, so total(p) is affine in p.
  size_t totals[3];
  for (int p : {1, 2, 3}) {
    EnsemblerModel model(make_cfg(FusionMode::channel, p), 3);
    totals[p - 1] = model.count_parameters();
  }
  CHECK(totals[1] - totals[0] == totals[2] - totals[1]);
  CHECK(totals[1] > totals[0]);

  // And the affine slope is exactly the stem's extra 3-channel block.
  EnsemblerModel one(make_cfg(FusionMode::channel, 1), 3);
  const int base = 6;  // scaled(64, 0.1)
  CHECK(totals[1] - totals[0] == static_cast<size_t>(base) * 3 * 7 * 7);
  CHECK(one.parameter_counts().encoders > 0);
}

TEST_CASE("count_parameters matches the structural oracle") {
  for (double width : {0.1, 0.25}) {
    EnsemblerModel model(make_cfg(FusionMode::channel, 1, 32, width), 3);
    const int base = std::max(4, static_cast<int>(std::lround(64 * width)));
    CHECK(model.count_parameters() == expected_channel_mode_params(3, base));
  }
  // Multi-channel input variant.
  EnsemblerModel multi(make_cfg(FusionMode::channel, 3, 32, 0.1), 3);
  CHECK(multi.count_parameters() == expected_channel_mode_params(9, 6));
}

TEST_CASE("width_scale 0.5 has strictly fewer parameters than 1.0") {
  EnsemblerModel half(make_cfg(FusionMode::channel, 1, 32, 0.5), 3);
  EnsemblerModel full(make_cfg(FusionMode::channel, 1, 32, 1.0), 3);
  CHECK(half.count_parameters() < full.count_parameters());
}

TEST_CASE("binarize semantics and monotone shrinkage") {
  const Tensor values = Tensor::from({2, 2}, {0.4f, 0.6f, 0.5f, 1.0f});
  const auto bin = binarize(values, 0.5f);
  CHECK(bin == std::vector<uint8_t>{0, 1, 0, 1});  // 0.5 is not above 0.5

  Tensor zeros({4, 4});
  for (uint8_t v : binarize(zeros, 0.5f)) CHECK(v == 0);

  Rng rng(9);
  Tensor rnd({8, 8});
  for (auto& v : rnd.vec()) v = rng.uniformf(0.f, 1.f);
  const auto low = binarize(rnd, 0.3f);
  const auto high = binarize(rnd, 0.7f);
  for (size_t i = 0; i < low.size(); ++i) CHECK(high[i] <= low[i]);
}

TEST_CASE("disable_input zeroes exactly one slot") {
  const auto set = random_set(3, 32, 13);
  const auto disabled = disable_input(set, 1);
  CHECK(disabled.maps[1].values.abs_max() == 0.f);
  CHECK(bitwise_equal(disabled.maps[0].values, set.maps[0].values));
  CHECK(bitwise_equal(disabled.maps[2].values, set.maps[2].values));
  // Idempotent.
  const auto twice = disable_input(disabled, 1);
  CHECK(bitwise_equal(twice.maps[1].values, disabled.maps[1].values));
  CHECK_THROWS_AS(disable_input(set, 3), Error);
  CHECK_THROWS_AS(disable_input(set, -1), Error);

  // Disabling every map equals an all-zero input response.
  EnsemblerModel model(make_cfg(FusionMode::sum, 3), 21);
  auto all_zero = set;
  for (int j = 0; j < 3; ++j) all_zero = disable_input(all_zero, j);
  ExplanationSet zero_set = set;
  for (auto& m : zero_set.maps) m.values.fill(0.f);
  CHECK(bitwise_equal(model.forward(all_zero).values, model.forward(zero_set).values));
}

TEST_CASE("sum mode with tied encoder weights is permutation invariant") {
  EnsemblerModel model(make_cfg(FusionMode::sum, 2), 31);
  // Tie encoder 1 to encoder 0 (weights and batch-norm buffers).
  auto params = model.parameters();
  std::map<std::string, Tensor*> by_name;
  for (auto& p : params) by_name[p.name] = &p.var.value();
  for (auto& p : params) {
    if (p.name.rfind("enc1.", 0) == 0) {
      const std::string src = "enc0." + p.name.substr(5);
      REQUIRE(by_name.count(src));
      p.var.value() = *by_name[src];
    }
  }

  auto set = random_set(2, 32, 17);
  auto swapped = set;
  std::swap(swapped.maps[0], swapped.maps[1]);
  CHECK(bitwise_equal(model.forward(set).values, model.forward(swapped).values));
}

TEST_CASE("checkpoint round trip preserves outputs and digest") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "xaiens_test_ens.ckpt";
  fs::remove(path);

  EnsemblerModel model(make_cfg(FusionMode::concat, 3), 77);
  const auto set = random_set(3, 32, 19);
  const auto before = model.forward(set);

  nlohmann::json state;
  state["epoch"] = 12;
  model.save(path, state);

  nlohmann::json loaded_state;
  auto loaded = EnsemblerModel::load(path, &loaded_state);
  CHECK(loaded_state["epoch"] == 12);
  CHECK(bitwise_equal(loaded->forward(set).values, before.values));
  CHECK(loaded->digest() == model.digest());
}
