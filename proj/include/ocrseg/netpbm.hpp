#pragma once

// Binary NetPBM: P6 (RGB) and P5 (gray), maxval 255 only.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ocrseg {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

// Throws IoError when the file cannot be written.
void write_ppm(const std::filesystem::path& path, const Image8& img);
void write_pgm(const std::filesystem::path& path, const Image8& img);

// Throws IoError for unreadable files and DataError for malformed ones.
Image8 read_netpbm(const std::filesystem::path& path);

}  // namespace ocrseg
