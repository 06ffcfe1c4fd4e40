// SPDX-License-Identifier: Apache-2.0
#include "xaiens/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

namespace xaiens::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

// Decodes to 8-bit RGB rows regardless of the source format.
std::vector<std::vector<png_byte>> read_png_rows(const std::filesystem::path& path,
                                                 int& width, int& height) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::io, "cannot open file: " + path.string());

  png_byte sig[8];
  require(std::fread(sig, 1, 8, f.get()) == 8 && !png_sig_cmp(sig, 0, 8),
          ErrorCode::io, "not a PNG file: " + path.string());

  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(ctx.png != nullptr, ErrorCode::io, "png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  require(ctx.info != nullptr, ErrorCode::io, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    fail(ErrorCode::io, "PNG decode error: " + path.string());

  png_init_io(ctx.png, f.get());
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const png_byte color = png_get_color_type(ctx.png, ctx.info);
  const png_byte depth = png_get_bit_depth(ctx.png, ctx.info);

  if (depth == 16) png_set_strip_16(ctx.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  std::vector<std::vector<png_byte>> rows(height);
  std::vector<png_bytep> row_ptrs(height);
  const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
  for (int y = 0; y < height; ++y) {
    rows[y].resize(rowbytes);
    row_ptrs[y] = rows[y].data();
  }
  png_read_image(ctx.png, row_ptrs.data());
  return rows;
}

void write_png(const std::filesystem::path& path, int width, int height,
               int color_type, const std::vector<png_bytep>& rows) {
  std::filesystem::create_directories(path.parent_path());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::io, "cannot write file: " + path.string());

  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(ctx.png != nullptr, ErrorCode::io, "png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  require(ctx.info != nullptr, ErrorCode::io, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    fail(ErrorCode::io, "PNG encode error: " + path.string());

  png_init_io(ctx.png, f.get());
  png_set_IHDR(ctx.png, ctx.info, width, height, 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  png_write_image(ctx.png, const_cast<png_bytep*>(rows.data()));
  png_write_end(ctx.png, nullptr);
}

inline png_byte to_u8(float v) {
  const float c = std::min(1.f, std::max(0.f, v));
  return static_cast<png_byte>(std::lround(c * 255.f));
}

}  // namespace

Tensor read_png_rgb(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto rows = read_png_rows(path, w, h);
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<float>(rows[y][3 * x + c]) / 255.f;
  return out;
}

Tensor read_png_mask(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto rows = read_png_rows(path, w, h);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Any nonzero channel marks the object.
      const int v = rows[y][3 * x] + rows[y][3 * x + 1] + rows[y][3 * x + 2];
      out.at(y, x) = v > 0 ? 1.f : 0.f;
    }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  require(image.ndim() == 3 && image.dim(0) == 3, ErrorCode::invalid_argument,
          "write_png_rgb: expected [3,H,W]");
  const int h = image.dim(1), w = image.dim(2);
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(3 * w));
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rows[y][3 * x + c] = to_u8(image.at(c, y, x));
    ptrs[y] = rows[y].data();
  }
  write_png(path, w, h, PNG_COLOR_TYPE_RGB, ptrs);
}

void write_png_mask(const std::filesystem::path& path, const Tensor& mask) {
  require(mask.ndim() == 2, ErrorCode::invalid_argument,
          "write_png_mask: expected [H,W]");
  const int h = mask.dim(0), w = mask.dim(1);
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w));
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) rows[y][x] = mask.at(y, x) > 0.f ? 255 : 0;
    ptrs[y] = rows[y].data();
  }
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, ptrs);
}

Tensor quantize_u8(const Tensor& image) {
  Tensor out = image;
  for (auto& v : out.vec()) v = static_cast<float>(to_u8(v)) / 255.f;
  return out;
}

Tensor resize_bilinear_chw(const Tensor& image, int out_h, int out_w) {
  require(image.ndim() == 3, ErrorCode::invalid_argument, "resize: CHW expected");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == out_h && W == out_w) return image;
  Tensor out({C, out_h, out_w});
  const double sh = static_cast<double>(H) / out_h;
  const double sw = static_cast<double>(W) / out_w;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      double sy = (y + 0.5) * sh - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, H - 1);
      const double fy = sy - y0;
      for (int x = 0; x < out_w; ++x) {
        double sx = (x + 0.5) * sw - 0.5;
        sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, W - 1);
        const double fx = sx - x0;
        const double v = (1 - fy) * ((1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1)) +
                         fy * ((1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

Tensor resize_nearest_hw(const Tensor& mask, int out_h, int out_w) {
  require(mask.ndim() == 2, ErrorCode::invalid_argument, "resize: HW expected");
  const int H = mask.dim(0), W = mask.dim(1);
  if (H == out_h && W == out_w) return mask;
  Tensor out({out_h, out_w});
  const double sh = static_cast<double>(H) / out_h;
  const double sw = static_cast<double>(W) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(H - 1, static_cast<int>((y + 0.5) * sh));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(W - 1, static_cast<int>((x + 0.5) * sw));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

namespace {

struct Affine {
  double a, b, c, d, tx, ty;  // input = [a b; c d] * output + [tx, ty]
};

// Inverse mapping for: p' = R(theta) * scale * (p - c) + c + shift.
Affine inverse_affine(int h, int w, double angle, double scale, double shift_x,
                      double shift_y) {
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double cosr = std::cos(angle), sinr = std::sin(angle);
  const double inv = 1.0 / scale;
  Affine m;
  m.a = cosr * inv;
  m.b = sinr * inv;
  m.c = -sinr * inv;
  m.d = cosr * inv;
  // p = R(-theta)/s * (p' - c - shift) + c
  m.tx = cx - m.a * (cx + shift_x) - m.b * (cy + shift_y);
  m.ty = cy - m.c * (cx + shift_x) - m.d * (cy + shift_y);
  return m;
}

}  // namespace

Tensor warp_affine_chw(const Tensor& image, double angle_rad, double scale,
                       double shift_x, double shift_y) {
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const Affine m = inverse_affine(H, W, angle_rad, scale, shift_x, shift_y);
  Tensor out({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = m.a * x + m.b * y + m.tx;
      const double sy = m.c * x + m.d * y + m.ty;
      if (sx < 0 || sy < 0 || sx > W - 1 || sy > H - 1) continue;  // fill 0
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < C; ++c) {
        const double v =
            (1 - fy) * ((1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1)) +
            fy * ((1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

Tensor warp_affine_nearest_hw(const Tensor& mask, double angle_rad, double scale,
                              double shift_x, double shift_y) {
  const int H = mask.dim(0), W = mask.dim(1);
  const Affine m = inverse_affine(H, W, angle_rad, scale, shift_x, shift_y);
  Tensor out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = m.a * x + m.b * y + m.tx;
      const double sy = m.c * x + m.d * y + m.ty;
      const long rx = std::lround(sx), ry = std::lround(sy);
      if (rx < 0 || ry < 0 || rx >= W || ry >= H) continue;
      out.at(y, x) = mask.at(static_cast<int>(ry), static_cast<int>(rx));
    }
  return out;
}

Tensor flip_horizontal(const Tensor& t) {
  Tensor out = t;
  if (t.ndim() == 3) {
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(c, y, x) = t.at(c, y, W - 1 - x);
  } else {
    const int H = t.dim(0), W = t.dim(1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(y, x) = t.at(y, W - 1 - x);
  }
  return out;
}

Tensor flip_vertical(const Tensor& t) {
  Tensor out = t;
  if (t.ndim() == 3) {
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(c, y, x) = t.at(c, H - 1 - y, x);
  } else {
    const int H = t.dim(0), W = t.dim(1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(y, x) = t.at(H - 1 - y, x);
  }
  return out;
}

Tensor rotate90(const Tensor& t, int quarters) {
  const int q = ((quarters % 4) + 4) % 4;
  if (q == 0) return t;
  Tensor cur = t;
  for (int step = 0; step < q; ++step) {
    if (cur.ndim() == 3) {
      const int C = cur.dim(0), H = cur.dim(1), W = cur.dim(2);
      Tensor next({C, W, H});
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < W; ++y)
          for (int x = 0; x < H; ++x) next.at(c, y, x) = cur.at(c, x, W - 1 - y);
      cur = std::move(next);
    } else {
      const int H = cur.dim(0), W = cur.dim(1);
      Tensor next({W, H});
      for (int y = 0; y < W; ++y)
        for (int x = 0; x < H; ++x) next.at(y, x) = cur.at(x, W - 1 - y);
      cur = std::move(next);
    }
  }
  return cur;
}

Tensor adjust_hue_saturation(const Tensor& image, double hue_shift,
                             double saturation_factor) {
  require(image.ndim() == 3 && image.dim(0) == 3, ErrorCode::invalid_argument,
          "hue/saturation: RGB CHW expected");
  const int H = image.dim(1), W = image.dim(2);
  Tensor out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double r = image.at(0, y, x), g = image.at(1, y, x), b = image.at(2, y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      double h = 0.0;
      if (delta > 0) {
        if (mx == r)
          h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g)
          h = (b - r) / delta + 2.0;
        else
          h = (r - g) / delta + 4.0;
        h /= 6.0;
        if (h < 0) h += 1.0;
      }
      double s = mx > 0 ? delta / mx : 0.0;
      const double v = mx;

      h = std::fmod(h + hue_shift + 1.0, 1.0);
      s = std::clamp(s * saturation_factor, 0.0, 1.0);

      const double hh = h * 6.0;
      const int sector = static_cast<int>(hh) % 6;
      const double f = hh - std::floor(hh);
      const double p = v * (1 - s);
      const double q = v * (1 - s * f);
      const double t = v * (1 - s * (1 - f));
      double ro = 0, go = 0, bo = 0;
      switch (sector) {
        case 0: ro = v; go = t; bo = p; break;
        case 1: ro = q; go = v; bo = p; break;
        case 2: ro = p; go = v; bo = t; break;
        case 3: ro = p; go = q; bo = v; break;
        case 4: ro = t; go = p; bo = v; break;
        default: ro = v; go = p; bo = q; break;
      }
      out.at(0, y, x) = static_cast<float>(ro);
      out.at(1, y, x) = static_cast<float>(go);
      out.at(2, y, x) = static_cast<float>(bo);
    }
  return out;
}

Tensor gaussian_blur_chw(const Tensor& image, double sigma) {
  require(image.ndim() == 3, ErrorCode::invalid_argument, "blur: CHW expected");
  if (sigma <= 0) return image;
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;

  Tensor tmp({C, H, W}), out({C, H, W});
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, W - 1);
          acc += kernel[i + radius] * image.at(c, y, xx);
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, H - 1);
          acc += kernel[i + radius] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return out;
}

Tensor center_crop_resize_chw(const Tensor& image, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument,
          "center crop fraction must be in (0,1]");
  if (fraction == 1.0) return image;
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int ch = std::max(1, static_cast<int>(std::lround(H * fraction)));
  const int cw = std::max(1, static_cast<int>(std::lround(W * fraction)));
  const int y0 = (H - ch) / 2, x0 = (W - cw) / 2;
  Tensor crop({C, ch, cw});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) crop.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return resize_bilinear_chw(crop, H, W);
}

Tensor center_crop_resize_nearest_hw(const Tensor& mask, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument,
          "center crop fraction must be in (0,1]");
  if (fraction == 1.0) return mask;
  const int H = mask.dim(0), W = mask.dim(1);
  const int ch = std::max(1, static_cast<int>(std::lround(H * fraction)));
  const int cw = std::max(1, static_cast<int>(std::lround(W * fraction)));
  const int y0 = (H - ch) / 2, x0 = (W - cw) / 2;
  Tensor crop({ch, cw});
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) crop.at(y, x) = mask.at(y0 + y, x0 + x);
  return resize_nearest_hw(crop, H, W);
}

}  // namespace xaiens::img
