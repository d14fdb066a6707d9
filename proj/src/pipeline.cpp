#include "glyphsr/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>

#include <unistd.h>

#include "glyphsr/errors.hpp"
#include "glyphsr/png_io.hpp"

namespace glyphsr {

namespace {

double keys_weight(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<std::array<int, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

Taps make_taps(int in, int out, int factor) {
    Taps t;
    t.index.resize(static_cast<std::size_t>(out));
    t.weight.resize(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) / factor - 0.5;
        const int base = static_cast<int>(std::floor(src));
        for (int k = 0; k < 4; ++k) {
            const int i = base - 1 + k;
            t.index[o][k] = std::clamp(i, 0, in - 1);
            t.weight[o][k] = keys_weight(src - i);
        }
    }
    return t;
}

ImagePlane to_channels(const ImagePlane& img, int channels) {
    if (img.channels == channels) return img;
    ImagePlane out(img.height, img.width, channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double mean = 0.0;
            for (int c = 0; c < img.channels; ++c) mean += img.at(y, x, c);
            mean /= img.channels;
            for (int c = 0; c < channels; ++c) out.at(y, x, c) = channels == 1 ? mean : (img.channels == 1 ? img.at(y, x) : mean);
        }
    }
    return out;
}

const char* status_name(RegionStatus s) {
    switch (s) {
        case RegionStatus::Processed: return "processed";
        case RegionStatus::Clipped: return "clipped";
        case RegionStatus::Failed: return "failed";
    }
    return "?";
}

bool footprint_inside(const TextRegion& r, int height, int width) {
    const AffineParams inv = invert_affine(r.theta);
    const double w = r.dst_width - 1, h = r.dst_height - 1;
    for (Point corner : {Point{0, 0}, Point{w, 0}, Point{0, h}, Point{w, h}}) {
        const Point p = inv.apply(corner);
        if (p.x < -1e-9 || p.y < -1e-9 || p.x > width - 1 + 1e-9 || p.y > height - 1 + 1e-9) return false;
    }
    return true;
}

}  // namespace

ImagePlane bicubic_upscale(const ImagePlane& image, int factor) {
    if (factor != 1 && factor != 2 && factor != 4) throw InvalidRange("upscale factor must be 1, 2 or 4");
    if (factor == 1) return image;
    const int H = image.height * factor, W = image.width * factor, C = image.channels;
    const Taps tx = make_taps(image.width, W, factor), ty = make_taps(image.height, H, factor);

    ImagePlane rows(image.height, W, C);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k) s += tx.weight[x][k] * image.at(y, tx.index[x][k], c);
                rows.at(y, x, c) = s;
            }
        }
    }
    ImagePlane out(H, W, C);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k) s += ty.weight[y][k] * rows.at(ty.index[y][k], x, c);
                out.at(y, x, c) = s;
            }
        }
    }
    return out;
}

SubprocessUpscaler::SubprocessUpscaler(std::string command, std::filesystem::path scratch_dir)
    : process_(std::move(command)), scratch_(std::move(scratch_dir)) {}

ImagePlane SubprocessUpscaler::upscale(const ImagePlane& image, int factor) {
    if (factor != 1 && factor != 2 && factor != 4) throw InvalidRange("upscale factor must be 1, 2 or 4");
    const std::string stem = "glyphsr_up_" + std::to_string(::getpid()) + "_" + std::to_string(calls_++);
    const auto in = scratch_ / (stem + "_in.png"), out = scratch_ / (stem + "_out.png");
    write_png(in, image);
    process_.exchange(in.string() + " " + std::to_string(factor) + " " + out.string());
    ImagePlane result = read_png(out);
    std::filesystem::remove(in);
    std::filesystem::remove(out);
    if (result.height != image.height * factor || result.width != image.width * factor)
        throw ShapeMismatch("background upscaler returned the wrong size");
    return to_channels(result, image.channels);
}

LineResult restore_line(const ImagePlane& line, int tile_width, const GuidanceConfig& cfg, const RecognizeFn& ocr,
                        const RestoreFn& restorer, int overlap) {
    const LineTiles tiles = slice_line(line, tile_width, overlap);
    LineResult r;
    std::vector<ImagePlane> restored;
    for (const auto& tile : tiles.tiles) {
        IterativeResult it = iterative_restore(tile, cfg, ocr, restorer);
        r.restore_calls += it.restore_calls;
        r.ocr_calls += it.ocr_calls;
        r.transcripts.insert(r.transcripts.end(), it.transcripts.begin(), it.transcripts.end());
        restored.push_back(std::move(it.image));
    }
    r.tiles = static_cast<int>(restored.size());
    if (tiles.padded) {
        r.image = restored.front().columns(0, line.width);
    } else {
        r.image = stitch_tiles(restored, tiles.starts, tiles.line_width, overlap);
    }
    return r;
}

nlohmann::json report_json(const RestorationReport& report) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : report.regions) {
        nlohmann::json j{{"region_id", r.region_id},
                         {"status", status_name(r.status)},
                         {"transcript_history", r.transcripts},
                         {"restore_calls", r.restore_calls},
                         {"ocr_calls", r.ocr_calls},
                         {"ms", r.ms}};
        if (!r.error.empty()) j["error"] = r.error;
        regions.push_back(std::move(j));
    }
    return {{"regions_processed", report.regions_processed},
            {"regions_clipped", report.regions_clipped},
            {"failures", report.failures},
            {"regions", regions}};
}

AffineParams scale_theta(const AffineParams& theta, int factor) {
    const double k = factor;
    return compose(AffineParams::scaling(k), compose(theta, AffineParams::scaling(1.0 / k)));
}

FullImageResult restore_full_image(const ImagePlane& image, const std::vector<TextRegion>& regions,
                                   BackgroundUpscaler& f, const RestoreFn& restorer, const GuidanceConfig& cfg,
                                   const std::function<RecognizeFn(const TextRegion&)>& ocr_for,
                                   const PipelineOptions& options) {
    FullImageResult out;
    const ImagePlane fI = f.upscale(image, options.factor);
    if (fI.height != image.height * options.factor || fI.width != image.width * options.factor)
        throw ShapeMismatch("background upscaler broke the size contract");
    const int k = options.factor;

    std::vector<std::pair<ImagePlane, AffineParams>> crops;
    for (const auto& region : regions) {
        RegionReport rep;
        rep.region_id = region.region_id;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            // The model sees a gray line at its own height.
            const ImagePlane crop = to_channels(warp(image, region.theta, region.dst_height, region.dst_width), 1);
            const LineResult line = restore_line(crop, options.line_width, cfg, ocr_for(region), restorer, options.overlap);
            rep.transcripts = line.transcripts;
            rep.restore_calls = line.restore_calls;
            rep.ocr_calls = line.ocr_calls;

            const AffineParams theta_k = scale_theta(region.theta, k);
            const ImagePlane f_crop = warp(fI, theta_k, region.dst_height * k, region.dst_width * k);
            const ImagePlane g_crop = to_channels(bicubic_upscale(line.image, k), fI.channels);
            if (!g_crop.all_finite()) throw NonFiniteActivation("restored crop is not finite");
            crops.emplace_back(blend_crop(g_crop, f_crop, options.blend_sigma), theta_k);
            rep.status = footprint_inside(region, image.height, image.width) ? RegionStatus::Processed
                                                                              : RegionStatus::Clipped;
        } catch (const std::exception& e) {
            rep.status = RegionStatus::Failed;
            rep.error = e.what();
        }
        rep.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        switch (rep.status) {
            case RegionStatus::Processed: ++out.report.regions_processed; break;
            case RegionStatus::Clipped: ++out.report.regions_clipped; break;
            case RegionStatus::Failed: ++out.report.failures; break;
        }
        out.report.regions.push_back(std::move(rep));
    }
    out.image = paste_regions(fI, crops).image;
    return out;
}

std::vector<TextRegion> read_region_manifest(const std::filesystem::path& path, int dst_height) {
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot read region manifest " + path.string());
    std::vector<TextRegion> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto& pts = j.at("src_triangle");
            if (!pts.is_array() || pts.size() != 3) throw ConfigError("src_triangle needs 3 points");
            Triangle tri;
            for (int i = 0; i < 3; ++i) tri[i] = {pts[i].at(0).get<double>(), pts[i].at(1).get<double>()};
            std::optional<std::string> text;
            if (j.contains("text") && !j["text"].is_null()) text = j["text"].get<std::string>();
            out.push_back(make_region(j.at("region_id").get<std::string>(), tri, dst_height, text));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace glyphsr
