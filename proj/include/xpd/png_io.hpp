#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xpd/common.hpp"

namespace xpd::io {

// Interleaved 8-bit image with 1 or 3 channels.
struct Image8 {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::vector<uint8_t> data;
};

void write_png8(const std::filesystem::path& path, const Image8& image);
Image8 read_png8(const std::filesystem::path& path);

void write_png16(const std::filesystem::path& path, const Grid2<uint16_t>& image);
Grid2<uint16_t> read_png16(const std::filesystem::path& path);

}  // namespace xpd::io
