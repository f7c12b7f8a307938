#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "occlm/common.hpp"

namespace occlm {

using Color = std::array<Scalar, 3>;

// Snap to the 8-bit grid so PNG round trips are exact.
inline Scalar quantize8(Scalar v) {
  v = std::min(1.0, std::max(0.0, v));
  return std::round(v * 255.0) / 255.0;
}

inline Color quantize8(const Color& c) {
  return {quantize8(c[0]), quantize8(c[1]), quantize8(c[2])};
}

// H x W x 3 intensity image, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int h, int w) : h_(h), w_(w), data_(static_cast<size_t>(h) * w * 3, 0.0) {}

  int height() const { return h_; }
  int width() const { return w_; }

  Scalar& at(int y, int x, int c) { return data_[(static_cast<size_t>(y) * w_ + x) * 3 + c]; }
  Scalar at(int y, int x, int c) const { return data_[(static_cast<size_t>(y) * w_ + x) * 3 + c]; }

  bool inside(int y, int x) const { return y >= 0 && y < h_ && x >= 0 && x < w_; }

  void set_pixel(int y, int x, const Color& c) {
    if (!inside(y, x)) return;
    for (int k = 0; k < 3; ++k) at(y, x, k) = c[static_cast<size_t>(k)];
  }

  const std::vector<Scalar>& raw() const { return data_; }
  std::vector<Scalar>& raw() { return data_; }

  // Bilinear sample at continuous pixel-center coordinates; zero outside.
  Scalar sample_bilinear(Scalar y, Scalar x, int c) const {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    Scalar fx = x - x0, fy = y - y0;
    auto px = [&](int yy, int xx) -> Scalar {
      return inside(yy, xx) ? at(yy, xx, c) : 0.0;
    };
    return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
  }

 private:
  int h_ = 0, w_ = 0;
  std::vector<Scalar> data_;
};

inline void write_png(const Image& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("png: cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png: write failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        Scalar v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
        row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png: read failure for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  Image img(h, w);
  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<Scalar>(row[static_cast<size_t>(x) * 3 + c]) / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---- Painting helpers (all writes quantized to the 8-bit grid) ----

inline void fill_rect(Image& img, Scalar x0, Scalar y0, Scalar x1, Scalar y1, const Color& c) {
  Color q = quantize8(c);
  int iy0 = std::max(0, static_cast<int>(std::ceil(y0 - 0.5)));
  int iy1 = std::min(img.height() - 1, static_cast<int>(std::floor(y1 - 0.5)));
  int ix0 = std::max(0, static_cast<int>(std::ceil(x0 - 0.5)));
  int ix1 = std::min(img.width() - 1, static_cast<int>(std::floor(x1 - 0.5)));
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x) img.set_pixel(y, x, q);
}

inline void fill_ellipse(Image& img, Scalar cx, Scalar cy, Scalar rx, Scalar ry, const Color& c) {
  if (rx <= 0 || ry <= 0) return;
  Color q = quantize8(c);
  int iy0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  int iy1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + ry)));
  int ix0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  int ix1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + rx)));
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x) {
      Scalar dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) img.set_pixel(y, x, q);
    }
}

// Point-in-polygon (even-odd rule), vertices in pixel coordinates.
inline bool inside_polygon(const std::vector<std::array<Scalar, 2>>& poly, Scalar x, Scalar y) {
  bool in = false;
  size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    Scalar xi = poly[i][0], yi = poly[i][1], xj = poly[j][0], yj = poly[j][1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

inline void fill_polygon(Image& img, const std::vector<std::array<Scalar, 2>>& poly,
                         const Color& c) {
  if (poly.size() < 3) return;
  Color q = quantize8(c);
  Scalar x0 = poly[0][0], x1 = poly[0][0], y0 = poly[0][1], y1 = poly[0][1];
  for (const auto& p : poly) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
  int iy1 = std::min(img.height() - 1, static_cast<int>(std::ceil(y1)));
  int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
  int ix1 = std::min(img.width() - 1, static_cast<int>(std::ceil(x1)));
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x)
      if (inside_polygon(poly, x + 0.5, y + 0.5)) img.set_pixel(y, x, q);
}

inline void draw_polyline(Image& img, const std::vector<std::array<Scalar, 2>>& pts,
                          Scalar thickness, const Color& c) {
  Color q = quantize8(c);
  Scalar r = thickness * 0.5;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    Scalar ax = pts[i][0], ay = pts[i][1], bx = pts[i + 1][0], by = pts[i + 1][1];
    Scalar x0 = std::min(ax, bx) - r, x1 = std::max(ax, bx) + r;
    Scalar y0 = std::min(ay, by) - r, y1 = std::max(ay, by) + r;
    int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
    int iy1 = std::min(img.height() - 1, static_cast<int>(std::ceil(y1)));
    int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
    int ix1 = std::min(img.width() - 1, static_cast<int>(std::ceil(x1)));
    Scalar vx = bx - ax, vy = by - ay;
    Scalar len2 = vx * vx + vy * vy;
    for (int y = iy0; y <= iy1; ++y)
      for (int x = ix0; x <= ix1; ++x) {
        Scalar px = x + 0.5 - ax, py = y + 0.5 - ay;
        Scalar t = len2 > 0 ? std::min(1.0, std::max(0.0, (px * vx + py * vy) / len2)) : 0.0;
        Scalar dx = px - t * vx, dy = py - t * vy;
        if (dx * dx + dy * dy <= r * r) img.set_pixel(y, x, q);
      }
  }
}

}  // namespace occlm
