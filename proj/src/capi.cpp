// SPDX-License-Identifier: Apache-2.0
#include "xaiens/xaiens_c.h"

#include <cstring>
#include <string>

#include "xaiens/config.hpp"
#include "xaiens/ensembler.hpp"
#include "xaiens/metrics.hpp"
#include "xaiens/pipeline.hpp"
#include "xaiens/quality.hpp"
#include "xaiens/training.hpp"

using namespace xaiens;

struct xe_pipeline {
  Config config;
};

namespace {

thread_local std::string tl_last_error;

xe_status status_from(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return XE_ERR_INVALID_ARGUMENT;
    case ErrorCode::io: return XE_ERR_IO;
    case ErrorCode::not_found: return XE_ERR_NOT_FOUND;
    case ErrorCode::stale_cache: return XE_ERR_STALE_CACHE;
    case ErrorCode::config: return XE_ERR_CONFIG;
    case ErrorCode::runtime: return XE_ERR_RUNTIME;
  }
  return XE_ERR_RUNTIME;
}

template <typename Fn>
xe_status guarded(Fn&& fn) {
  try {
    fn();
    tl_last_error.clear();
    return XE_OK;
  } catch (const Error& e) {
    tl_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    tl_last_error = e.what();
    return XE_ERR_RUNTIME;
  }
}

xe_status require_c(bool cond, const char* message) {
  if (cond) return XE_OK;
  tl_last_error = message;
  return XE_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* xe_status_name(xe_status status) {
  switch (status) {
    case XE_OK: return "ok";
    case XE_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case XE_ERR_IO: return "io";
    case XE_ERR_NOT_FOUND: return "not_found";
    case XE_ERR_STALE_CACHE: return "stale_cache";
    case XE_ERR_CONFIG: return "config";
    case XE_ERR_RUNTIME: return "runtime";
  }
  return "unknown";
}

const char* xe_version(void) { return "0.1.0"; }

const char* xe_last_error(void) { return tl_last_error.c_str(); }

xe_status xe_pipeline_open(const char* config_path, xe_pipeline** out) {
  if (xe_status s = require_c(config_path && out, "null argument"); s != XE_OK)
    return s;
  return guarded([&] {
    auto handle = std::make_unique<xe_pipeline>();
    handle->config = Config::load(config_path);
    *out = handle.release();
  });
}

xe_status xe_pipeline_open_text(const char* config_text, xe_pipeline** out) {
  if (xe_status s = require_c(config_text && out, "null argument"); s != XE_OK)
    return s;
  return guarded([&] {
    auto handle = std::make_unique<xe_pipeline>();
    handle->config = Config::parse(config_text);
    *out = handle.release();
  });
}

void xe_pipeline_free(xe_pipeline* pipeline) { delete pipeline; }

xe_status xe_pipeline_set(xe_pipeline* pipeline, const char* key, const char* value) {
  if (xe_status s = require_c(pipeline && key && value, "null argument"); s != XE_OK)
    return s;
  return guarded([&] { pipeline->config.set(key, value); });
}

xe_status xe_pipeline_config_digest(xe_pipeline* pipeline, char* buffer,
                                    size_t buffer_len) {
  if (xe_status s = require_c(pipeline && buffer && buffer_len > 0, "null argument");
      s != XE_OK)
    return s;
  return guarded([&] {
    const std::string digest = pipeline::validate_config(pipeline->config);
    require(buffer_len > digest.size(), ErrorCode::invalid_argument,
            "digest buffer too small");
    std::memcpy(buffer, digest.c_str(), digest.size() + 1);
  });
}

xe_status xe_pipeline_run(xe_pipeline* pipeline, const char* stage) {
  if (xe_status s = require_c(pipeline && stage, "null argument"); s != XE_OK)
    return s;
  return guarded([&] { pipeline::run_stage(pipeline->config, stage); });
}

xe_status xe_soft_dice_loss(const float* pred, const float* mask, int32_t h,
                            int32_t w, double smoothing, double* out) {
  if (xe_status s = require_c(pred && mask && out && h > 0 && w > 0, "bad argument");
      s != XE_OK)
    return s;
  return guarded([&] {
    Tensor p = Tensor::from({h, w}, std::vector<float>(pred, pred + static_cast<size_t>(h) * w));
    Tensor m = Tensor::from({h, w}, std::vector<float>(mask, mask + static_cast<size_t>(h) * w));
    *out = training::soft_dice_loss(p, m, smoothing);
  });
}

xe_status xe_binarize(const float* values, int32_t h, int32_t w, float cutoff,
                      uint8_t* out_mask) {
  if (xe_status s = require_c(values && out_mask && h > 0 && w > 0, "bad argument");
      s != XE_OK)
    return s;
  return guarded([&] {
    Tensor v = Tensor::from(
        {h, w}, std::vector<float>(values, values + static_cast<size_t>(h) * w));
    const auto bin = ensembler::binarize(v, cutoff);
    std::memcpy(out_mask, bin.data(), bin.size());
  });
}

xe_status xe_pixel_confusion(const uint8_t* pred, const uint8_t* mask, int32_t h,
                             int32_t w, uint64_t out_counts[4]) {
  if (xe_status s = require_c(pred && mask && out_counts && h > 0 && w > 0,
                              "bad argument");
      s != XE_OK)
    return s;
  return guarded([&] {
    const size_t n = static_cast<size_t>(h) * w;
    const auto c = metrics::pixel_confusion(std::vector<uint8_t>(pred, pred + n),
                                            std::vector<uint8_t>(mask, mask + n));
    out_counts[0] = c.tp;
    out_counts[1] = c.fp;
    out_counts[2] = c.fn;
    out_counts[3] = c.tn;
  });
}

xe_status xe_ens_metric(const uint8_t* pred, const uint8_t* mask, int32_t h,
                        int32_t w, const char* kind, double* out) {
  if (xe_status s = require_c(pred && mask && kind && out && h > 0 && w > 0,
                              "bad argument");
      s != XE_OK)
    return s;
  return guarded([&] {
    const size_t n = static_cast<size_t>(h) * w;
    *out = metrics::ens_metric(std::vector<uint8_t>(pred, pred + n),
                               std::vector<uint8_t>(mask, mask + n),
                               metrics::ens_kind_from_name(kind));
  });
}

xe_status xe_div_metric(double train_value, double valid_value, double* out) {
  if (xe_status s = require_c(out != nullptr, "null output"); s != XE_OK) return s;
  return guarded([&] { *out = metrics::div_metric(train_value, valid_value); });
}

xe_status xe_exh_metric(double ens_value, double baseline_value, double* out) {
  if (xe_status s = require_c(out != nullptr, "null output"); s != XE_OK) return s;
  return guarded([&] { *out = metrics::exh_metric(ens_value, baseline_value); });
}

xe_status xe_sparseness_gini(const float* values, size_t n, double* out) {
  if (xe_status s = require_c(values && out && n > 0, "bad argument"); s != XE_OK)
    return s;
  return guarded([&] {
    Tensor v = Tensor::from({static_cast<int>(n)},
                            std::vector<float>(values, values + n));
    *out = quality::sparseness_gini(v);
  });
}

}  // extern "C"
