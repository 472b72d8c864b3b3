#pragma once

#include "litsearch/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace litsearch {

/// Interleaved 8-bit RGB, row-major.
struct Rgb8Image {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(Index x, Index y, Index channel) const { return data[std::size_t((y * width + x) * 3 + channel)]; }
};

/// [3, H, W] in [0, 1] to 8 bits, rounding to nearest; values outside clamp.
Rgb8Image to_rgb8(const Tensor& pixels);

/// Tiles laid out row by row with `gutter` white pixels between neighbours.
/// Every tile must have the same size.
Rgb8Image compose_grid(const std::vector<std::vector<Tensor>>& rows, Index gutter = 2);

/// Binary P6 with maxval 255.
std::string encode_ppm(const Rgb8Image& img);
Rgb8Image decode_ppm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const Rgb8Image& img);
Rgb8Image read_ppm(const std::filesystem::path& path);

}  // namespace litsearch
