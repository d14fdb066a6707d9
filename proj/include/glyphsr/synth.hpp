#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphsr/image.hpp"

namespace glyphsr {

// Monospace bitmap font. Each bitmap is cell_h x cell_w, 1 = ink.
struct GlyphAtlas {
    std::u32string charset;
    int cell_h = 16;
    int cell_w = 8;
    std::vector<std::vector<std::uint8_t>> bitmaps;  // one per charset entry

    int index_of(char32_t c) const;  // -1 when absent
    bool contains(char32_t c) const { return index_of(c) >= 0; }
    // Horizontal pitch in pixels when rendered at `height`.
    int pitch(int height) const;
    void validate() const;
};

// Digits, uppercase Latin and ten simple CJK ideographs, 16 x 8 cells.
const GlyphAtlas& default_atlas();

// Atlas file: a JSON header line {charset, cell_h, cell_w} followed by the raw bitmap block.
void save_atlas(const std::filesystem::path& path, const GlyphAtlas& atlas);
GlyphAtlas load_atlas(const std::filesystem::path& path);

// Dark ink (-1) on light background (+1), nearest-neighbour scaled so a cell is `height` tall.
// The empty string renders as one blank cell.
ImagePlane render_text(const std::string& text, const GlyphAtlas& atlas, int height = 48);

// The scaled bitmap of one charset entry, as render_text would draw it.
ImagePlane render_glyph(int index, const GlyphAtlas& atlas, int height);

// Pads (with background) or trims on the right to exactly `width` columns.
ImagePlane fit_width(const ImagePlane& line, int width);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct DegradationConfig {
    // Desk defaults leave roughly half of raw LR crops unreadable to the template OCR.
    Range blur_sigma{1.2, 3.0};
    Range noise_std{0.03, 0.2};
    Range downsample{4.5, 7.0};
    Range quantize_levels{8, 64};
    bool second_order = false;

    void validate() const;
    static DegradationConfig identity();
};

// The values actually drawn for one pass.
struct DegradeParams {
    double blur_sigma = 0.0;
    double noise_std = 0.0;
    double downsample = 1.0;
    int quantize_levels = 256;
};

struct DegradeResult {
    ImagePlane image;
    std::vector<DegradeParams> passes;
};

// blur -> noise -> area downsample -> quantize -> bilinear upsample, repeated once more
// with fresh draws when second_order is set.
DegradeResult degrade_with_params(const ImagePlane& hr, const DegradationConfig& config, std::uint64_t seed);
ImagePlane degrade(const ImagePlane& hr, const DegradationConfig& config, std::uint64_t seed);

// Box-filter shrink by a real factor (output size rounded, at least 1 px), and bilinear resize.
ImagePlane area_downsample(const ImagePlane& image, double factor);
ImagePlane resize_bilinear(const ImagePlane& image, int out_height, int out_width);

struct DatasetSpec {
    std::u32string charset;
    int count = 0;
    int dup = 20;
    int min_len = 1;
    int max_len = 10;
    int line_height = 48;
    int line_width = 240;
    // Nominal source text height, drawn uniformly and then filtered to [16, 512].
    int source_height_lo = 12;
    int source_height_hi = 96;
    DegradationConfig degrade;
    std::uint64_t seed = 0;
};

struct ManifestRecord {
    std::string id;
    std::string hr_path;  // relative to the manifest directory
    std::string lr_path;
    std::string text;
    int height_px = 0;
    std::string language_tag;
    std::uint64_t seed = 0;
    std::vector<DegradeParams> degrade_params;
};

struct DatasetSummary {
    std::filesystem::path manifest;
    std::size_t hr_count = 0;
    std::size_t lr_count = 0;
    std::size_t rejected = 0;  // draws outside the height filter
};

constexpr int kMinTextHeight = 16;
constexpr int kMaxTextHeight = 512;

// "latin", "cjk" or "mixed" according to the characters present.
std::string language_tag(const std::u32string& text);

// Random texts rendered once and degraded `dup` times. Writes hr/ and lr/ PNGs plus
// manifest.jsonl under out_dir.
DatasetSummary build_dataset(const DatasetSpec& spec, const GlyphAtlas& atlas, const std::filesystem::path& out_dir);

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace glyphsr
