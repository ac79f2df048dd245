#include "metapix/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace metapix {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

}  // namespace

Rgb8Image to_rgb8(const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("to_rgb8 expects a 3 x H x W tensor, got " + shape_str(image.shape()));
  }
  Rgb8Image out;
  out.height = int(image.dim(1));
  out.width = int(image.dim(2));
  const Index plane = image.dim(1) * image.dim(2);
  out.pixels.resize(std::size_t(plane) * 3);
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
      out.pixels[std::size_t(i * 3 + c)] = std::uint8_t(std::lround(v * 255.0f));
    }
  return out;
}

TensorF from_rgb8(const Rgb8Image& image) {
  const Index plane = Index(image.width) * image.height;
  TensorF out({3, image.height, image.width});
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < 3; ++c) out[c * plane + i] = float(image.pixels[std::size_t(i * 3 + c)]) / 255.0f;
  return out;
}

Rgb8Image tile_grid(const std::vector<std::vector<TensorF>>& cells, int separator) {
  if (cells.empty() || cells.front().empty()) throw std::invalid_argument("tile_grid: empty grid");
  if (separator < 0) throw std::invalid_argument("tile_grid: negative separator");
  const std::size_t cols = cells.front().size();
  const Rgb8Image first = to_rgb8(cells.front().front());
  const int h = first.height, w = first.width;
  Rgb8Image grid;
  grid.height = int(cells.size()) * h + (int(cells.size()) - 1) * separator;
  grid.width = int(cols) * w + (int(cols) - 1) * separator;
  grid.pixels.assign(std::size_t(grid.width) * std::size_t(grid.height) * 3, 255);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (cells[r].size() != cols) throw std::invalid_argument("tile_grid: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      const Rgb8Image tile = to_rgb8(cells[r][c]);
      if (tile.height != h || tile.width != w) throw std::invalid_argument("tile_grid: cells differ in size");
      const int y0 = int(r) * (h + separator), x0 = int(c) * (w + separator);
      for (int y = 0; y < h; ++y) {
        std::copy_n(tile.pixels.begin() + std::ptrdiff_t(y) * w * 3, w * 3,
                    grid.pixels.begin() + (std::ptrdiff_t(y0 + y) * grid.width + x0) * 3);
      }
    }
  }
  return grid;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& image) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + std::size_t(y) * std::size_t(image.width) * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Rgb8Image read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  Rgb8Image out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_expand(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  out.width = int(png_get_image_width(png, info));
  out.height = int(png_get_image_height(png, info));
  out.pixels.resize(std::size_t(out.width) * std::size_t(out.height) * 3);
  for (int y = 0; y < out.height; ++y) {
    png_read_row(png, out.pixels.data() + std::size_t(y) * std::size_t(out.width) * 3, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace metapix
