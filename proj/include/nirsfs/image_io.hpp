#pragma once
// PNG (libpng) and PFM codecs for NIR images, normal maps, and plots.
//
// Normal maps: 16-bit RGB PNG, channel = round((c + 1) / 2 · 65535).
// Raw NIR:     16-bit grayscale PNG, value = round(raw · 65535), raw in [0, 1].
// Normalized NIR / depth: PFM, grayscale "Pf", scale −1.0 (little-endian),
// rows stored bottom-to-top.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/error.hpp"
#include "nirsfs/photometry.hpp"

namespace nirsfs::io {

/// Decoded PNG samples, normalized to [0, 1] per channel, interleaved.
struct PngImage {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;  // raw integer samples (8- or 16-bit)

  double max_value() const { return bit_depth == 16 ? 65535.0 : 255.0; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Writes 8- or 16-bit gray (1) / RGB (3) samples. Output is byte-deterministic.
inline void write_png(const std::string& path, std::size_t width, std::size_t height,
                      std::size_t channels, int bit_depth, const std::vector<std::uint16_t>& samples) {
  if (channels != 1 && channels != 3) throw Error("write_png: channels must be 1 or 3");
  if (bit_depth != 8 && bit_depth != 16) throw Error("write_png: bit depth must be 8 or 16");
  if (samples.size() != width * height * channels) throw ShapeError("write_png: sample count mismatch");

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing", path);

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn,
                                            detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed", path);
  }
  const std::size_t row_bytes = width * channels * (bit_depth / 8);
  std::vector<png_byte> row(row_bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed (" + err + ")", path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint16_t* src = samples.data() + y * width * channels;
    for (std::size_t i = 0; i < width * channels; ++i) {
      if (bit_depth == 16) {
        row[2 * i] = png_byte(src[i] >> 8);  // PNG is big-endian
        row[2 * i + 1] = png_byte(src[i] & 0xff);
      } else {
        row[i] = png_byte(std::min<std::uint16_t>(src[i], 255));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0 || std::ferror(fp.get())) throw IoError("PNG write failed", path);
}

/// Reads gray, gray+alpha, RGB or RGBA PNGs at 8 or 16 bits (alpha dropped,
/// palette expanded).
inline PngImage read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading", path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file", path);
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn,
                                           detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed", path);
  }
  PngImage img;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG (" + err + ")", path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  row.resize(png_get_rowbytes(png, info));
  img.samples.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    std::uint16_t* dst = img.samples.data() + y * img.width * img.channels;
    for (std::size_t i = 0; i < img.width * img.channels; ++i) {
      dst[i] = img.bit_depth == 16 ? std::uint16_t((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline std::uint16_t quantize16(double unit) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 65535.0));
}

// ---------------------------------------------------------------------------
// Normal maps

inline void write_normal_png(const std::string& path, const NormalMap& n) {
  std::vector<std::uint16_t> s(n.size() * 3);
  for (std::size_t i = 0; i < n.size(); ++i) {
    s[3 * i] = quantize16((n[i].x + 1.0) / 2.0);
    s[3 * i + 1] = quantize16((n[i].y + 1.0) / 2.0);
    s[3 * i + 2] = quantize16((n[i].z + 1.0) / 2.0);
  }
  write_png(path, n.width(), n.height(), 3, 16, s);
}

/// Interleaved x,y,z components in [−1, 1], written without renormalization.
/// Inverse of read_normal_components to the bit.
inline void write_normal_components(const std::string& path, std::size_t width, std::size_t height,
                                    const std::vector<double>& c) {
  if (c.size() != width * height * 3) throw ShapeError("write_normal_components: size mismatch");
  std::vector<std::uint16_t> s(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) s[i] = quantize16((c[i] + 1.0) / 2.0);
  write_png(path, width, height, 3, 16, s);
}

/// Encoded components c = 2·v/65535 − 1 as stored (not renormalized).
inline std::vector<double> read_normal_components(const std::string& path, std::size_t& width,
                                                  std::size_t& height) {
  const PngImage img = read_png(path);
  if (img.channels != 3) throw IoError("normal map must be an RGB PNG", path);
  width = img.width;
  height = img.height;
  std::vector<double> c(img.samples.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 2.0 * img.samples[i] / img.max_value() - 1.0;
  return c;  // interleaved x,y,z
}

/// Stored normal map, renormalized to unit length with nz clamped to >= 0.
inline NormalMap read_normal_png(const std::string& path) {
  std::size_t w = 0, h = 0;
  const auto c = read_normal_components(path, w, h);
  NormalMap n(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    Vec3 v{c[3 * i], c[3 * i + 1], std::max(0.0, c[3 * i + 2])};
    n[i] = v.norm() < 1e-6 ? Vec3{0, 0, 1} : v.normalized();
  }
  return n;
}

// ---------------------------------------------------------------------------
// NIR images

inline void write_nir_png(const std::string& path, const NirImage& img) {
  const NirImage raw = img.as_raw();
  std::vector<std::uint16_t> s(raw.field.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = quantize16(raw.field.values[i]);
  write_png(path, raw.width(), raw.height(), 1, 16, s);
}

/// Any gray/RGB PNG as raw radiance in [0, 1] (RGB is averaged).
inline NirImage read_nir_png(const std::string& path) {
  const PngImage img = read_png(path);
  NirImage out{ScalarField(img.width, img.height), Radiance::Raw};
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < img.channels; ++c) acc += img.samples[i * img.channels + c];
    out.field.values[i] = acc / (img.max_value() * double(img.channels));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PFM

inline void write_pfm(const std::string& path, const ScalarField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing", path);
  os << "Pf\n" << f.width << ' ' << f.height << "\n-1.0\n";
  std::vector<float> row(f.width);
  for (std::size_t y = f.height; y-- > 0;) {
    for (std::size_t x = 0; x < f.width; ++x) row[x] = static_cast<float>(f.at(x, y));
    // Host is little-endian (x86-64); floats are written as-is.
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
  }
  if (!os) throw IoError("PFM write failed", path);
}

inline ScalarField read_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading", path);
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  is >> magic >> w >> h >> scale;
  if (!is || magic != "Pf" || w == 0 || h == 0) throw IoError("not a grayscale PFM", path);
  if (scale >= 0.0) throw IoError("big-endian PFM is not supported", path);
  is.get();  // single whitespace byte before the raster
  ScalarField f(w, h);
  std::vector<float> row(w);
  for (std::size_t y = h; y-- > 0;) {
    is.read(reinterpret_cast<char*>(row.data()), std::streamsize(w * sizeof(float)));
    if (!is) throw IoError("truncated PFM raster", path);
    for (std::size_t x = 0; x < w; ++x) f.at(x, y) = row[x];
  }
  return f;
}

inline void write_nir_pfm(const std::string& path, const NirImage& img) {
  write_pfm(path, img.as_normalized().field);
}

inline NirImage read_nir_pfm(const std::string& path) {
  return NirImage{read_pfm(path), Radiance::Normalized};
}

/// Dispatches on extension: .pfm is normalized floats, anything else is PNG raw.
inline NirImage read_nir(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  return ext == ".pfm" ? read_nir_pfm(path) : read_nir_png(path);
}

inline void write_albedo_png(const std::string& path, const ScalarField& albedo) {
  std::vector<std::uint16_t> s(albedo.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = quantize16(albedo.values[i]);
  write_png(path, albedo.width, albedo.height, 1, 16, s);
}

inline ScalarField read_albedo_png(const std::string& path) {
  const NirImage im = read_nir_png(path);
  return im.field;
}

}  // namespace nirsfs::io
