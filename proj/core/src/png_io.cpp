#include "mipslice/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "mipslice/error.hpp"

namespace mipslice::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void check_raster(const Raster& r) {
  if (r.rows < 1 || r.cols < 1 || (r.channels != 1 && r.channels != 3) ||
      r.bytes.size() != static_cast<std::size_t>(r.rows) * r.cols * r.channels) {
    throw ShapeError("png: raster dimensions do not match buffer");
  }
}

void write_rows(png_structp png, png_infop info, const Raster& raster) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.cols), static_cast<png_uint_32>(raster.rows), 8,
               raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(raster.cols) * raster.channels;
  for (int r = 0; r < raster.rows; ++r) {
    png_write_row(png, const_cast<png_bytep>(raster.bytes.data() + r * stride));
  }
  png_write_end(png, nullptr);
}

void append_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

}  // namespace

void write(const std::filesystem::path& path, const Raster& raster) {
  check_raster(raster);
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("png: cannot open for writing " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: write failed for " + path.string());
  }
  png_init_io(png, f.get());
  write_rows(png, info, raster);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode(const Raster& raster) {
  check_raster(raster);
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encode failed");
  }
  png_set_write_fn(png, &out, append_to_vector, nullptr);
  write_rows(png, info, raster);
  png_destroy_write_struct(&png, &info);
  return out;
}

Raster read(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: libpng init failed");
  }
  Raster raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: decode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raster.cols = static_cast<int>(png_get_image_width(png, info));
  raster.rows = static_cast<int>(png_get_image_height(png, info));
  raster.channels = png_get_channels(png, info);
  raster.bytes.resize(static_cast<std::size_t>(raster.rows) * raster.cols * raster.channels);
  const std::size_t stride = static_cast<std::size_t>(raster.cols) * raster.channels;
  for (int r = 0; r < raster.rows; ++r) png_read_row(png, raster.bytes.data() + r * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raster;
}

}  // namespace mipslice::png
