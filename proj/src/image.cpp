#include "colorflow/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numeric>

#include "colorflow/errors.hpp"
#include "colorflow/rng.hpp"

namespace colorflow {

RgbImage RgbImage::blank(int w, int h, float r, float g, float b) {
  RgbImage img;
  img.width = w;
  img.height = h;
  img.data.resize(3 * std::size_t(w) * h);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    img.data[3 * i + 0] = r;
    img.data[3 * i + 1] = g;
    img.data[3 * i + 2] = b;
  }
  return img;
}

void PixelCloud::reserve(std::size_t n) {
  r.reserve(n);
  g.reserve(n);
  b.reserve(n);
}

void PixelCloud::resize(std::size_t n) {
  r.resize(n);
  g.resize(n);
  b.resize(n);
}

void PixelCloud::push_back(float rr, float gg, float bb) {
  r.push_back(rr);
  g.push_back(gg);
  b.push_back(bb);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RgbImage load_png(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: allocation failure");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: failed to decode '" + path + "'");
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (w == 0 || h == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("png: zero-dimension image '" + path + "'");
  }
  const int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int depth = png_get_bit_depth(png, info);
  if (depth != 8 && depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("png: unsupported bit depth " + std::to_string(depth));
  }

  const std::size_t stride = png_get_rowbytes(png, info);
  raster.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  RgbImage img;
  img.width = int(w);
  img.height = int(h);
  img.data.resize(3 * std::size_t(w) * h);
  if (depth == 8) {
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = float(raster[i]) / 255.0f;
  } else {
    // 16-bit PNG samples are big-endian
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      unsigned v = (unsigned(raster[2 * i]) << 8) | raster[2 * i + 1];
      img.data[i] = float(v) / 65535.0f;
    }
  }
  return img;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

RgbImage load_jpeg(std::FILE* fp, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("jpeg: failed to decode '" + path + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const unsigned w = cinfo.output_width;
  const unsigned h = cinfo.output_height;
  if (w == 0 || h == 0) {
    jpeg_destroy_decompress(&cinfo);
    throw ValidationError("jpeg: zero-dimension image '" + path + "'");
  }
  RgbImage img;
  img.width = int(w);
  img.height = int(h);
  img.data.resize(3 * std::size_t(w) * h);
  std::vector<JSAMPLE> row(std::size_t(w) * cinfo.output_components);
  JSAMPROW rowp = row.data();
  std::size_t out = 0;
  while (cinfo.output_scanline < h) {
    jpeg_read_scanlines(&cinfo, &rowp, 1);
    for (unsigned i = 0; i < w * 3; ++i) img.data[out++] = float(row[i]) / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

RgbImage load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  unsigned char sig[8] = {0};
  std::size_t got = std::fread(sig, 1, 8, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return load_png(fp.get(), path);
  if (got >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return load_jpeg(fp.get(), path);
  throw ValidationError("unsupported image format: '" + path + "'");
}

void save_png(const RgbImage& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0)
    throw ValidationError("save_png: empty image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: allocation failure");
  }
  std::vector<png_byte> raster;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: failed to encode '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  raster.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, img.data[i]));
    raster[i] = png_byte(std::lround(v * 255.0f));
  }
  rows.resize(std::size_t(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[std::size_t(y)] = raster.data() + 3 * std::size_t(y) * img.width;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PixelCloud image_cloud(const RgbImage& img) {
  PixelCloud cloud;
  const std::size_t n = img.pixel_count();
  cloud.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.r[i] = img.data[3 * i + 0];
    cloud.g[i] = img.data[3 * i + 1];
    cloud.b[i] = img.data[3 * i + 2];
  }
  return cloud;
}

PixelCloud sample_pixels(const RgbImage& img, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample_pixels: n must be >= 1");
  if (img.pixel_count() == 0) throw ValidationError("sample_pixels: empty image");
  Rng rng(seed);
  PixelCloud cloud;
  cloud.resize(n);
  const std::size_t total = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = rng.below(total);
    cloud.r[i] = img.data[3 * k + 0];
    cloud.g[i] = img.data[3 * k + 1];
    cloud.b[i] = img.data[3 * k + 2];
  }
  return cloud;
}

GrayImage normalize_grayscale(const RgbImage& img) {
  GrayImage out;
  out.width = img.width;
  out.height = img.height;
  const std::size_t n = img.pixel_count();
  out.intensity.resize(n);
  if (n == 0) return out;

  std::vector<float> luma(n);
  for (std::size_t i = 0; i < n; ++i)
    luma[i] = luma709(img.data[3 * i + 0], img.data[3 * i + 1], img.data[3 * i + 2]);

  auto [mn, mx] = std::minmax_element(luma.begin(), luma.end());
  if (*mn == *mx) {
    std::fill(out.intensity.begin(), out.intensity.end(), 0.5f);
    return out;
  }

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return luma[a] < luma[b]; });
  const double inv_n = 1.0 / double(n);
  for (std::size_t rank = 0; rank < n; ++rank)
    out.intensity[order[rank]] = float((double(rank) + 0.5) * inv_n);
  return out;
}

RgbImage dihedral_transform(const RgbImage& img, int k) {
  if (k < 0 || k > 7) throw ValidationError("dihedral_transform: k out of range");
  const int w = img.width, h = img.height;
  const bool mirror = k >= 4;
  const int rot = k & 3;
  const bool swap = (rot & 1) != 0;
  RgbImage out;
  out.width = swap ? h : w;
  out.height = swap ? w : h;
  out.data.resize(img.data.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sx = mirror ? w - 1 - x : x;
      int ox = x, oy = y;
      switch (rot) {
        case 0: ox = x; oy = y; break;
        case 1: ox = h - 1 - y; oy = x; break;          // 90 cw
        case 2: ox = w - 1 - x; oy = h - 1 - y; break;  // 180
        case 3: ox = y; oy = w - 1 - x; break;          // 270 cw
      }
      const float* src = img.px(sx, y);
      float* dst = out.px(ox, oy);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  }
  return out;
}

RgbImage augment(const RgbImage& img, std::uint64_t seed) {
  Rng rng(seed);
  return dihedral_transform(img, int(rng.below(8)));
}

RgbImage resize_bilinear(const RgbImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ValidationError("resize_bilinear: bad size");
  RgbImage out;
  out.width = out_w;
  out.height = out_h;
  out.data.resize(3 * std::size_t(out_w) * out_h);
  const double sx = double(img.width) / out_w;
  const double sy = double(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, img.height - 1);
    int y1c = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      const float* p00 = img.px(x0c, y0c);
      const float* p10 = img.px(x1c, y0c);
      const float* p01 = img.px(x0c, y1c);
      const float* p11 = img.px(x1c, y1c);
      float* dst = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double top = p00[c] * (1.0 - wx) + p10[c] * wx;
        double bot = p01[c] * (1.0 - wx) + p11[c] * wx;
        dst[c] = float(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

void write_cloud_csv(const PixelCloud& cloud, const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < cloud.size(); ++i)
    std::fprintf(fp.get(), "%.6f,%.6f,%.6f\n", double(cloud.r[i]),
                 double(cloud.g[i]), double(cloud.b[i]));
}

}  // namespace colorflow
