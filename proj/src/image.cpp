#include "vlhsa/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vlhsa {

Image::Image(int h, int w, Rgb fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("image: non-positive size");
  px.resize(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < px.size(); i += 3) {
    px[i] = fill[0];
    px[i + 1] = fill[1];
    px[i + 2] = fill[2];
  }
}

void Image::set(int r, int c, const Rgb& v) {
  double* p = at(r, c);
  p[0] = v[0];
  p[1] = v[1];
  p[2] = v[2];
}

Rgb Image::get(int r, int c) const {
  const double* p = at(r, c);
  return {p[0], p[1], p[2]};
}

void fill_rect(Image& img, int r0, int c0, int r1, int c1, const Rgb& color) {
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, img.height);
  c1 = std::min(c1, img.width);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) img.set(r, c, color);
}

void draw_line(Image& img, int r0, int c0, int r1, int c1, const Rgb& color) {
  // Bresenham
  const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
  const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = (dc > dr ? dc : -dr) / 2;
  int r = r0, c = c0;
  while (true) {
    if (img.in_bounds(r, c)) img.set(r, c, color);
    if (r == r1 && c == c1) break;
    const int e2 = err;
    if (e2 > -dc) {
      err -= dr;
      c += sc;
    }
    if (e2 < dr) {
      err += dc;
      r += sr;
    }
  }
}

void draw_border(Image& img, int r0, int c0, int r1, int c1, int thickness, const Rgb& color) {
  for (int t = 0; t < thickness; ++t) {
    fill_rect(img, r0 + t, c0, r0 + t + 1, c1, color);
    fill_rect(img, r1 - 1 - t, c0, r1 - t, c1, color);
    fill_rect(img, r0, c0 + t, r1, c0 + t + 1, color);
    fill_rect(img, r0, c1 - 1 - t, r1, c1 - t, color);
  }
}

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32_be(out, crc);
}

uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& img) {
  if (img.height <= 0 || img.width <= 0) throw std::invalid_argument("encode_png: empty image");

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + static_cast<size_t>(img.width) * 3));
  for (int r = 0; r < img.height; ++r) {
    raw.push_back(0);
    for (int c = 0; c < img.width; ++c) {
      const double* p = img.at(r, c);
      raw.push_back(quantize(p[0]));
      raw.push_back(quantize(p[1]));
      raw.push_back(quantize(p[2]));
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw std::runtime_error("encode_png: zlib compression failed");
  compressed.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

void save_png(const std::string& path, const Image& img) {
  const std::vector<uint8_t> bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("save_png: write failed for " + path);
}

}  // namespace vlhsa
