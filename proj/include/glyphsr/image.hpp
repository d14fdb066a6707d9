#pragma once

#include <cstddef>
#include <vector>

namespace glyphsr {

// H x W x C raster, row-major with interleaved channels, values nominally in [-1, 1].
struct ImagePlane {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> data;

    ImagePlane() = default;
    ImagePlane(int h, int w, int c, double fill = 0.0);

    double& at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const ImagePlane& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }
    bool all_finite() const;

    // Columns [x0, x0 + w) of every row.
    ImagePlane columns(int x0, int w) const;
};

void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* what);

ImagePlane clamp_unit(ImagePlane image);

double mean_squared_error(const ImagePlane& a, const ImagePlane& b);
double max_abs_diff(const ImagePlane& a, const ImagePlane& b);
// Peak signal-to-noise ratio for the [-1, 1] range (peak-to-peak 2).
double psnr(const ImagePlane& a, const ImagePlane& b);

}  // namespace glyphsr
