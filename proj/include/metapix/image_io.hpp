#pragma once

#include "metapix/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace metapix {

struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

/// 3 x H x W tensor in [0, 1] to interleaved 8-bit RGB (round to nearest).
Rgb8Image to_rgb8(const TensorF& image);
TensorF from_rgb8(const Rgb8Image& image);

/// Tiles equally sized 3 x H x W images into a rows x cols grid separated by
/// `separator` white pixels: (rows H + (rows - 1) sep) x (cols W + (cols - 1) sep).
Rgb8Image tile_grid(const std::vector<std::vector<TensorF>>& cells, int separator = 2);

void write_png(const std::filesystem::path& path, const Rgb8Image& image);
Rgb8Image read_png(const std::filesystem::path& path);

}  // namespace metapix
