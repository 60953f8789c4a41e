#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mipslice::png {

struct Raster {
  int rows = 0;
  int cols = 0;
  int channels = 1;  ///< 1 = gray, 3 = RGB
  std::vector<std::uint8_t> bytes;  ///< row-major, interleaved channels
};

void write(const std::filesystem::path& path, const Raster& raster);
/// Reads 8-bit gray or RGB(A); other layouts are converted to 8-bit gray/RGB.
Raster read(const std::filesystem::path& path);

/// Encodes into memory (used by the HTTP service).
std::vector<std::uint8_t> encode(const Raster& raster);

}  // namespace mipslice::png
