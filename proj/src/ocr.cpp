#include "glyphsr/ocr.hpp"

#include <algorithm>
#include <cmath>

#include <unistd.h>

#include "glyphsr/errors.hpp"
#include "glyphsr/png_io.hpp"
#include "glyphsr/rng.hpp"
#include "glyphsr/textcodec.hpp"

namespace glyphsr {

namespace {

ImagePlane to_gray(const ImagePlane& img) {
    if (img.channels == 1) return img;
    ImagePlane g(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int c = 0; c < img.channels; ++c) s += img.at(y, x, c);
            g.at(y, x) = s / img.channels;
        }
    }
    return g;
}

// Mean-removed copy and its L2 norm.
struct Centered {
    std::vector<double> v;
    double norm = 0.0;
};

Centered center(const double* data, std::size_t n, std::size_t stride, std::size_t rows, std::size_t cols) {
    Centered c;
    c.v.reserve(n);
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < cols; ++k) mean += data[r * stride + k];
    }
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < cols; ++k) c.v.push_back(data[r * stride + k] - mean);
    }
    for (double x : c.v) c.norm += x * x;
    c.norm = std::sqrt(c.norm);
    return c;
}

double ncc(const Centered& a, const Centered& b) {
    // Flat patches carry no shape; numerical dust below 1e-9 counts as flat.
    if (a.norm < 1e-9 || b.norm < 1e-9) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) dot += a.v[i] * b.v[i];
    return dot / (a.norm * b.norm);
}

}  // namespace

double normalized_cross_correlation(const ImagePlane& a, const ImagePlane& b) {
    require_same_shape(a, b, "normalized_cross_correlation");
    const std::size_t n = a.data.size();
    return ncc(center(a.data.data(), n, n, 1, n), center(b.data.data(), n, n, 1, n));
}

OcrResult template_recognize(const ImagePlane& crop, const GlyphAtlas& atlas) {
    OcrResult result;
    if (crop.empty()) return result;
    const ImagePlane gray = to_gray(crop);
    const int h = gray.height;
    const int pitch = atlas.pitch(h);
    const std::size_t cell_n = static_cast<std::size_t>(h) * pitch;

    std::vector<Centered> templates;
    templates.reserve(atlas.charset.size());
    for (std::size_t i = 0; i < atlas.charset.size(); ++i) {
        const ImagePlane g = render_glyph(static_cast<int>(i), atlas, h);
        templates.push_back(center(g.data.data(), cell_n, pitch, h, pitch));
    }

    const int cells = gray.width / pitch;
    std::u32string text;
    for (int c = 0; c < cells; ++c) {
        const Centered cell = center(gray.data.data() + static_cast<std::size_t>(c) * pitch, cell_n,
                                     static_cast<std::size_t>(gray.width), h, pitch);
        int best = -1;
        double best_score = -2.0;
        for (std::size_t i = 0; i < templates.size(); ++i) {
            const double s = ncc(cell, templates[i]);
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(i);
            }
        }
        // Low-contrast cells (smoothed noise on background) count as flat.
        const double rms = cell.norm / std::sqrt(static_cast<double>(cell_n));
        if (rms < kFlatCellRms || best < 0 || best_score < kBlankCellThreshold) continue;
        text += atlas.charset[static_cast<std::size_t>(best)];
        result.per_char_confidence.push_back(std::clamp(best_score, 0.0, 1.0));
    }
    result.text = encode_utf8(text);
    return result;
}

OcrResult noisy_oracle(const std::string& gt_text, double error_rate, const std::u32string& charset,
                       std::uint64_t seed) {
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw InvalidRange("error_rate must lie in [0, 1]");
    const auto cps = decode_utf8(gt_text);
    std::u32string out;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        char32_t c = cps[i];
        KeyedRng rng({seed, static_cast<std::uint64_t>(i)});
        if (rng.bernoulli(error_rate)) {
            std::u32string others;
            for (char32_t k : charset) {
                if (k != c) others += k;
            }
            if (!others.empty()) c = others[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(others.size()) - 1))];
        }
        out += c;
    }
    OcrResult r;
    r.text = encode_utf8(out);
    r.per_char_confidence.assign(out.size(), 1.0 - error_rate);
    return r;
}

SubprocessOcr::SubprocessOcr(std::string command, std::filesystem::path scratch_dir)
    : process_(std::move(command)), scratch_(std::move(scratch_dir)) {}

std::string SubprocessOcr::recognize(const ImagePlane& crop) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto path = scratch_ / ("glyphsr_ocr_" + std::to_string(::getpid()) + "_" + std::to_string(calls_++) + ".png");
    write_png(path, crop);
    std::string text;
    try {
        text = process_.exchange(path.string());
    } catch (...) {
        std::filesystem::remove(path);
        throw;
    }
    std::filesystem::remove(path);
    return text;
}

}  // namespace glyphsr
