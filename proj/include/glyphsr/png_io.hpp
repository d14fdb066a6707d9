#pragma once

#include <filesystem>

#include "glyphsr/image.hpp"

namespace glyphsr {

// 8-bit grayscale or RGB PNG. Pixel values map to [-1, 1] by v / 127.5 - 1.
ImagePlane read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImagePlane& image);

std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

// Rounds every value through the 8-bit representation, as a write/read cycle would.
ImagePlane quantize_8bit(ImagePlane image);

}  // namespace glyphsr
