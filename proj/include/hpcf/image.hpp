#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hpcf/errors.hpp"

namespace hpcf {

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int h = 0;
  int w = 0;
  int channels = 1;
  std::vector<std::uint8_t> pix;

  std::uint8_t& at(int y, int x, int c) {
    return pix[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pix[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
};

/// Decodes an 8-bit PNG. Palette/16-bit/alpha variants are folded down to
/// plain gray or RGB.
Image read_png(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace hpcf
