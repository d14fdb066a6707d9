#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphsr/geometry.hpp"
#include "glyphsr/guidance.hpp"
#include "glyphsr/image.hpp"
#include "glyphsr/subprocess.hpp"

namespace glyphsr {

// Keys cubic convolution (a = -0.5) on half-pixel centres with replicate edges.
ImagePlane bicubic_upscale(const ImagePlane& image, int factor);

// Whole-image upscaler f. Output dims are input dims times factor, factor in {1, 2, 4}.
class BackgroundUpscaler {
public:
    virtual ~BackgroundUpscaler() = default;
    virtual ImagePlane upscale(const ImagePlane& image, int factor) = 0;
};

class BicubicUpscaler : public BackgroundUpscaler {
public:
    ImagePlane upscale(const ImagePlane& image, int factor) override { return bicubic_upscale(image, factor); }
};

// External model: we send "<in.png> <factor> <out.png>", it writes out.png and answers a line.
class SubprocessUpscaler : public BackgroundUpscaler {
public:
    explicit SubprocessUpscaler(std::string command,
                                std::filesystem::path scratch_dir = std::filesystem::temp_directory_path());
    ImagePlane upscale(const ImagePlane& image, int factor) override;

private:
    LineProcess process_;
    std::filesystem::path scratch_;
    std::uint64_t calls_ = 0;
};

struct LineResult {
    ImagePlane image;
    std::vector<std::string> transcripts;  // every OCR reading, tile by tile
    int restore_calls = 0;
    int ocr_calls = 0;
    int tiles = 0;
};

// Slices a model-height line into tile_width tiles, runs iterative_restore on each and
// stitches the results back to the line's width.
LineResult restore_line(const ImagePlane& line, int tile_width, const GuidanceConfig& cfg, const RecognizeFn& ocr,
                        const RestoreFn& restorer, int overlap = 16);

enum class RegionStatus { Processed, Clipped, Failed };

struct RegionReport {
    std::string region_id;
    RegionStatus status = RegionStatus::Processed;
    std::vector<std::string> transcripts;
    int restore_calls = 0;
    int ocr_calls = 0;
    double ms = 0.0;
    std::string error;
};

struct RestorationReport {
    int regions_processed = 0;
    int regions_clipped = 0;
    int failures = 0;
    std::vector<RegionReport> regions;
};

nlohmann::json report_json(const RestorationReport& report);

// theta for a factor-k background: S(k) . theta . S(1/k). Same linear part, translation times k.
AffineParams scale_theta(const AffineParams& theta, int factor);

struct PipelineOptions {
    int factor = 2;
    int line_width = 240;  // model tile width
    int overlap = 16;
    double blend_sigma = 3.0;
};

struct FullImageResult {
    ImagePlane image;
    RestorationReport report;
};

// I' = f(I) pasted over with blended restorations of every region, in manifest order.
// A region is "clipped" when its footprint leaves the image; it is still restored.
// Exceptions inside a region mark it failed and leave f(I) untouched there.
FullImageResult restore_full_image(const ImagePlane& image, const std::vector<TextRegion>& regions,
                                   BackgroundUpscaler& f, const RestoreFn& restorer, const GuidanceConfig& cfg,
                                   const std::function<RecognizeFn(const TextRegion&)>& ocr_for,
                                   const PipelineOptions& options);

// JSONL region manifest: {region_id, image_id, src_triangle: [[x,y] x 3], text: string|null}.
// Regions get a destination height of dst_height and an aspect-preserving width.
std::vector<TextRegion> read_region_manifest(const std::filesystem::path& path, int dst_height);

}  // namespace glyphsr
