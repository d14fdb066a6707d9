#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "glyphsr/image.hpp"
#include "glyphsr/subprocess.hpp"
#include "glyphsr/synth.hpp"

namespace glyphsr {

struct OcrResult {
    std::string text;
    std::vector<double> per_char_confidence;
};

// Cells whose best correlation falls below this are read as background.
constexpr double kBlankCellThreshold = 0.2;
// Cells whose RMS deviation from their own mean is below this hold no ink.
constexpr double kFlatCellRms = 0.12;

// Normalized cross-correlation of two equal-size planes; 0 when either is flat.
double normalized_cross_correlation(const ImagePlane& a, const ImagePlane& b);

// Fixed-pitch segmentation at the crop's height, best-NCC glyph per cell, ties to the
// earlier charset entry. Colour crops are averaged to gray first.
OcrResult template_recognize(const ImagePlane& crop, const GlyphAtlas& atlas);

// Each character is replaced, with probability error_rate, by a different charset
// character drawn uniformly. Draws are keyed by (seed, character index).
OcrResult noisy_oracle(const std::string& gt_text, double error_rate, const std::u32string& charset,
                       std::uint64_t seed);

// External recognizer: we write a PNG path line, it answers with one transcript line.
// Calls are serialized.
class SubprocessOcr {
public:
    explicit SubprocessOcr(std::string command,
                           std::filesystem::path scratch_dir = std::filesystem::temp_directory_path());

    std::string recognize(const ImagePlane& crop);

private:
    LineProcess process_;
    std::filesystem::path scratch_;
    std::mutex mutex_;
    std::uint64_t calls_ = 0;
};

}  // namespace glyphsr
