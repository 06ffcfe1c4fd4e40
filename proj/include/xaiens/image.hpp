// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "xaiens/tensor.hpp"

namespace xaiens::img {

// Images are CHW float tensors in [0,1]; masks are HW float tensors in {0,1}.

/// Reads a PNG as a [3,H,W] tensor in [0,1]. Grayscale inputs are broadcast.
Tensor read_png_rgb(const std::filesystem::path& path);
/// Reads a PNG as a [H,W] tensor; any nonzero source pixel maps to 1.
Tensor read_png_mask(const std::filesystem::path& path);
/// Writes a [3,H,W] tensor in [0,1] as an 8-bit RGB PNG.
void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
/// Writes a [H,W] tensor in {0,1} as an 8-bit grayscale PNG (0/255).
void write_png_mask(const std::filesystem::path& path, const Tensor& mask);

/// Quantizes to 8 bits and back, matching what a PNG round trip produces.
Tensor quantize_u8(const Tensor& image);

Tensor resize_bilinear_chw(const Tensor& image, int out_h, int out_w);
Tensor resize_nearest_hw(const Tensor& mask, int out_h, int out_w);

/// Affine warp: output pixel p' samples input at
///   p = R(-theta)/scale * (p' - c - shift) + c,   c = image center.
/// Out-of-range samples fill with 0. Bilinear for images.
Tensor warp_affine_chw(const Tensor& image, double angle_rad, double scale,
                       double shift_x, double shift_y);
/// Same geometry with nearest-neighbor sampling (mask-safe).
Tensor warp_affine_nearest_hw(const Tensor& mask, double angle_rad, double scale,
                              double shift_x, double shift_y);

Tensor flip_horizontal(const Tensor& t);  // CHW or HW
Tensor flip_vertical(const Tensor& t);
/// Rotates by quarter turns counter-clockwise; quarters in {0,1,2,3}.
Tensor rotate90(const Tensor& t, int quarters);

/// Hue shift in [-0.5, 0.5] turns and saturation factor; CHW in [0,1].
Tensor adjust_hue_saturation(const Tensor& image, double hue_shift,
                             double saturation_factor);

/// Separable Gaussian blur per channel, CHW.
Tensor gaussian_blur_chw(const Tensor& image, double sigma);

/// Central crop to fraction of the side, then resize back to original size.
Tensor center_crop_resize_chw(const Tensor& image, double fraction);
Tensor center_crop_resize_nearest_hw(const Tensor& mask, double fraction);

}  // namespace xaiens::img
