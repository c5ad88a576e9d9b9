#pragma once

#include "prefseg/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace prefseg::io {

using Bytes = Grid<std::uint8_t>;

// 8-bit grayscale PNG.
void write_png_gray(const std::filesystem::path& path, const Bytes& pixels);
Bytes read_png_gray(const std::filesystem::path& path);

// 8-bit RGB PNG, pixels interleaved row-major (3 bytes per pixel).
void write_png_rgb(const std::filesystem::path& path, int rows, int cols, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> encode_png_rgb(int rows, int cols, const std::vector<std::uint8_t>& rgb);

// [0,1] intensities <-> 8-bit values (round to nearest).
Bytes quantize(const Image& image);
Image dequantize(const Bytes& bytes);
// Quantize then dequantize, i.e. the value a PNG round trip produces.
Image quantize_roundtrip(const Image& image);

void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

// Masks are stored as 0/255; any value >= 128 reads back as foreground.
void write_mask(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path);

// CSV lines "row,col".
void write_points(const std::filesystem::path& path, const PointSet& points);
PointSet read_points(const std::filesystem::path& path);

}  // namespace prefseg::io
