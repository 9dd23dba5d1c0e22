#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace colorflow {

// Row-major RGB raster, channels normalized to [0,1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // 3 * width * height

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  float* px(int x, int y) { return data.data() + 3 * (std::size_t(y) * width + x); }
  const float* px(int x, int y) const {
    return data.data() + 3 * (std::size_t(y) * width + x);
  }
  static RgbImage blank(int w, int h, float r = 0, float g = 0, float b = 0);
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> intensity;  // width * height, [0,1]
};

// Empirical color distribution of an image: N samples in the RGB unit cube.
// SoA so the flow kernels can consume it directly.
struct PixelCloud {
  std::vector<float> r, g, b;
  std::string source_id;

  std::size_t size() const { return r.size(); }
  bool empty() const { return r.empty(); }
  void reserve(std::size_t n);
  void resize(std::size_t n);
  void push_back(float rr, float gg, float bb);
  std::array<float, 3> at(std::size_t i) const { return {r[i], g[i], b[i]}; }
};

inline float luma709(float r, float g, float b) {
  return 0.2126f * r + 0.7152f * g + 0.0722f * b;
}

// PNG (8/16-bit) or JPEG (8-bit), sniffed from the file header. Grayscale and
// palette rasters are expanded to RGB; alpha is stripped.
RgbImage load_image(const std::string& path);

// 8-bit RGB PNG; values clamped to [0,1] and rounded.
void save_png(const RgbImage& img, const std::string& path);

// Every pixel, scan order.
PixelCloud image_cloud(const RgbImage& img);

// n pixels uniformly with replacement; fixed seed gives a fixed cloud.
PixelCloud sample_pixels(const RgbImage& img, std::size_t n, std::uint64_t seed);

// BT.709 luma remapped through its empirical CDF with midpoint ranks
// (i+0.5)/N, ties broken by pixel index; a constant image maps to 0.5.
GrayImage normalize_grayscale(const RgbImage& img);

// The 8 dihedral transforms. k in [0,8): k&3 = number of 90-degree clockwise
// rotations, k>=4 additionally mirrors horizontally first. Pixel multiset is
// preserved exactly.
RgbImage dihedral_transform(const RgbImage& img, int k);

// One of the 8 transforms, chosen uniformly from the seed.
RgbImage augment(const RgbImage& img, std::uint64_t seed);

RgbImage resize_bilinear(const RgbImage& img, int out_w, int out_h);

// r,g,b per row, 6 decimal digits
void write_cloud_csv(const PixelCloud& cloud, const std::string& path);

}  // namespace colorflow
