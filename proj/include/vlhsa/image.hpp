#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vlhsa {

using Rgb = std::array<double, 3>;

/// RGB raster, values in [0,1], row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> px;  // height*width*3

  Image() = default;
  Image(int h, int w, Rgb fill = {0, 0, 0});

  double* at(int r, int c) { return px.data() + (static_cast<size_t>(r) * width + c) * 3; }
  const double* at(int r, int c) const {
    return px.data() + (static_cast<size_t>(r) * width + c) * 3;
  }
  void set(int r, int c, const Rgb& v);
  Rgb get(int r, int c) const;
  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
};

void fill_rect(Image& img, int r0, int c0, int r1, int c1, const Rgb& color);
void draw_line(Image& img, int r0, int c0, int r1, int c1, const Rgb& color);
/// Rectangle outline of the given thickness, drawn inside the bounds.
void draw_border(Image& img, int r0, int c0, int r1, int c1, int thickness, const Rgb& color);

/// Encode as 8-bit RGB PNG. Deterministic bytes for identical images.
std::vector<uint8_t> encode_png(const Image& img);
void save_png(const std::string& path, const Image& img);

}  // namespace vlhsa
