#include "glyphsr/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "glyphsr/errors.hpp"

namespace glyphsr {

ImagePlane::ImagePlane(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || (c != 1 && c != 3)) {
        throw ShapeMismatch("invalid image shape " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                            std::to_string(c));
    }
}

bool ImagePlane::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

ImagePlane ImagePlane::columns(int x0, int w) const {
    ImagePlane out(height, w, channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) out.at(y, x, c) = at(y, x0 + x, c);
        }
    }
    return out;
}

void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                            std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                            std::to_string(b.width) + "x" + std::to_string(b.channels));
    }
}

ImagePlane clamp_unit(ImagePlane image) {
    for (double& v : image.data) v = std::clamp(v, -1.0, 1.0);
    return image;
}

double mean_squared_error(const ImagePlane& a, const ImagePlane& b) {
    require_same_shape(a, b, "mean_squared_error");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double psnr(const ImagePlane& a, const ImagePlane& b) {
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

}  // namespace glyphsr
