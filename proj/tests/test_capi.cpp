// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "xaiens/xaiens_c.h"

namespace fs = std::filesystem;

TEST_CASE("status names and version") {
  CHECK(std::string(xe_status_name(XE_OK)) == "ok");
  CHECK(std::string(xe_status_name(XE_ERR_STALE_CACHE)) == "stale_cache");
  CHECK(std::string(xe_version()).find('.') != std::string::npos);
}

TEST_CASE("numeric surface: dice, binarize, confusion, metrics") {
  const float pred[4] = {1.f, 1.f, 0.f, 0.f};
  const float mask[4] = {1.f, 0.f, 0.f, 0.f};
  double dice = 0.0;
  REQUIRE(xe_soft_dice_loss(pred, mask, 2, 2, 1.0, &dice) == XE_OK);
  // 1 - (2*1 + 1)/(2 + 1 + 1) = 0.25
  CHECK(dice == doctest::Approx(0.25).epsilon(1e-12));

  const float values[4] = {0.4f, 0.6f, 0.5f, 1.0f};
  uint8_t bin[4];
  REQUIRE(xe_binarize(values, 2, 2, 0.5f, bin) == XE_OK);
  CHECK(bin[0] == 0);
  CHECK(bin[1] == 1);
  CHECK(bin[2] == 0);
  CHECK(bin[3] == 1);

  const uint8_t p[4] = {1, 1, 0, 0};
  const uint8_t m[4] = {1, 0, 0, 0};
  uint64_t counts[4];
  REQUIRE(xe_pixel_confusion(p, m, 2, 2, counts) == XE_OK);
  CHECK(counts[0] == 1);  // tp
  CHECK(counts[1] == 1);  // fp
  CHECK(counts[2] == 0);  // fn
  CHECK(counts[3] == 2);  // tn

  double iou = 0.0, f1 = 0.0, acc = 0.0;
  REQUIRE(xe_ens_metric(p, m, 2, 2, "iou", &iou) == XE_OK);
  REQUIRE(xe_ens_metric(p, m, 2, 2, "f1", &f1) == XE_OK);
  REQUIRE(xe_ens_metric(p, m, 2, 2, "acc", &acc) == XE_OK);
  CHECK(iou == 0.5);
  CHECK(f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(acc == 0.75);

  CHECK(xe_ens_metric(p, m, 2, 2, "nope", &iou) == XE_ERR_INVALID_ARGUMENT);
  CHECK(std::string(xe_last_error()).find("nope") != std::string::npos);

  double div = 0.0;
  REQUIRE(xe_div_metric(0.734, 0.599, &div) == XE_OK);
  CHECK(std::fabs(div - 0.865) < 1e-12);

  double exh = 0.0;
  REQUIRE(xe_exh_metric(0.3, 0.6, &exh) == XE_OK);
  CHECK(exh == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(xe_exh_metric(0.3, 0.0, &exh) == XE_ERR_INVALID_ARGUMENT);

  const float gini_vals[4] = {0.f, 0.f, 1.f, 0.f};
  double gini = 0.0;
  REQUIRE(xe_sparseness_gini(gini_vals, 4, &gini) == XE_OK);
  CHECK(gini == 0.75);
}

TEST_CASE("null arguments are rejected, not crashed on") {
  CHECK(xe_pipeline_open(nullptr, nullptr) == XE_ERR_INVALID_ARGUMENT);
  CHECK(xe_soft_dice_loss(nullptr, nullptr, 2, 2, 1.0, nullptr) ==
        XE_ERR_INVALID_ARGUMENT);
  double out = 0.0;
  CHECK(xe_div_metric(0.1, 0.2, &out) == XE_OK);
  xe_pipeline_free(nullptr);  // no-op
}

TEST_CASE("pipeline handle: open text, override, digest, run a stage") {
  const fs::path out = fs::temp_directory_path() / "xaiens_capi_run";
  fs::remove_all(out);

  const std::string text =
      "seed = 3\nout = " + out.string() +
      "\n[data]\nsource = synthetic\nn = 8\nside = 32\nclasses = circle\n";
  xe_pipeline* p = nullptr;
  REQUIRE(xe_pipeline_open_text(text.c_str(), &p) == XE_OK);

  char digest_a[64], digest_b[64];
  REQUIRE(xe_pipeline_config_digest(p, digest_a, sizeof(digest_a)) == XE_OK);
  REQUIRE(xe_pipeline_set(p, "seed", "4") == XE_OK);
  REQUIRE(xe_pipeline_config_digest(p, digest_b, sizeof(digest_b)) == XE_OK);
  CHECK(std::strcmp(digest_a, digest_b) != 0);

  // Unknown keys surface as config errors at validation time.
  REQUIRE(xe_pipeline_set(p, "data.bogus", "1") == XE_OK);
  CHECK(xe_pipeline_config_digest(p, digest_b, sizeof(digest_b)) == XE_ERR_CONFIG);
  REQUIRE(xe_pipeline_open_text(text.c_str(), &p) == XE_OK);

  REQUIRE(xe_pipeline_run(p, "synth") == XE_OK);
  CHECK(fs::exists(out / "dataset" / "images"));
  CHECK(xe_pipeline_run(p, "no-such-stage") == XE_ERR_INVALID_ARGUMENT);
  // eval without prior stages reports a not-found condition.
  CHECK(xe_pipeline_run(p, "eval") == XE_ERR_NOT_FOUND);
  xe_pipeline_free(p);
}
