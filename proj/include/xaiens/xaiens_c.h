/* SPDX-License-Identifier: Apache-2.0 */
#ifndef XAIENS_C_H
#define XAIENS_C_H

/*
 * C API for the explanation-ensembling pipeline. The library owns all state
 * behind opaque handles; every call returns a status code and the last
 * error message is available per thread via xe_last_error().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define XE_API __declspec(dllexport)
#else
#define XE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum xe_status {
  XE_OK = 0,
  XE_ERR_INVALID_ARGUMENT = 1,
  XE_ERR_IO = 2,
  XE_ERR_NOT_FOUND = 3,
  XE_ERR_STALE_CACHE = 4,
  XE_ERR_CONFIG = 5,
  XE_ERR_RUNTIME = 6,
} xe_status;

XE_API const char* xe_status_name(xe_status status);
XE_API const char* xe_version(void);
/* Message describing the most recent failure on this thread ("" if none). */
XE_API const char* xe_last_error(void);

/* ---- configured pipeline ---- */

typedef struct xe_pipeline xe_pipeline;

XE_API xe_status xe_pipeline_open(const char* config_path, xe_pipeline** out);
XE_API xe_status xe_pipeline_open_text(const char* config_text, xe_pipeline** out);
XE_API void xe_pipeline_free(xe_pipeline* pipeline);
/* Overrides one flat config key ("seed", "explain.preset", ...). */
XE_API xe_status xe_pipeline_set(xe_pipeline* pipeline, const char* key,
                                 const char* value);
/* Validates the configuration and writes its digest (hex, NUL-terminated). */
XE_API xe_status xe_pipeline_config_digest(xe_pipeline* pipeline, char* buffer,
                                           size_t buffer_len);
/* Stage is one of: synth, train-classifier, explain, train-ensembler, eval,
 * ablate, report, or "run" for the whole pipeline. */
XE_API xe_status xe_pipeline_run(xe_pipeline* pipeline, const char* stage);

/* ---- numeric surface ---- */

/* Soft dice loss between pred in [0,1] and a binary mask, both h*w row-major. */
XE_API xe_status xe_soft_dice_loss(const float* pred, const float* mask,
                                   int32_t h, int32_t w, double smoothing,
                                   double* out);

/* Strictly-above thresholding into out_mask (h*w bytes of 0/1). */
XE_API xe_status xe_binarize(const float* values, int32_t h, int32_t w,
                             float cutoff, uint8_t* out_mask);

/* Pixelwise confusion counts: out_counts = {tp, fp, fn, tn}. */
XE_API xe_status xe_pixel_confusion(const uint8_t* pred, const uint8_t* mask,
                                    int32_t h, int32_t w, uint64_t out_counts[4]);

/* kind is "iou", "f1" or "acc". Empty-vs-empty scores 1 for iou/f1. */
XE_API xe_status xe_ens_metric(const uint8_t* pred, const uint8_t* mask,
                               int32_t h, int32_t w, const char* kind,
                               double* out);

/* Diverseness: 1 - train_value + valid_value. */
XE_API xe_status xe_div_metric(double train_value, double valid_value, double* out);

/* Exhaustiveness: ens_value / baseline_value; baseline 0 is an error. */
XE_API xe_status xe_exh_metric(double ens_value, double baseline_value, double* out);

/* Gini sparseness of |values| (n entries); all-zero input scores 0. */
XE_API xe_status xe_sparseness_gini(const float* values, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* XAIENS_C_H */
