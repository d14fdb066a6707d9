#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "glyphsr/image.hpp"

namespace glyphsr {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

using Triangle = std::array<Point, 3>;

// 2x3 affine map [[m00, m01, m02], [m10, m11, m12]] from source pixel coordinates to
// target pixel coordinates.
struct AffineParams {
    std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

    static AffineParams identity() { return {}; }
    static AffineParams scaling(double s) { return {{s, 0.0, 0.0, 0.0, s, 0.0}}; }

    double operator()(int row, int col) const { return m[row * 3 + col]; }
    Point apply(Point p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }
    double determinant() const { return m[0] * m[4] - m[1] * m[3]; }
};

// outer ∘ inner: apply inner first.
AffineParams compose(const AffineParams& outer, const AffineParams& inner);

// Solves the 6-unknown system mapping each src point onto its dst counterpart.
AffineParams affine_from_boxes(const Triangle& src, const Triangle& dst);
AffineParams invert_affine(const AffineParams& theta);

struct TextRegion {
    std::string region_id;
    Triangle src_triangle;
    int dst_height = 0;
    int dst_width = 0;
    AffineParams theta;
    std::optional<std::string> text;
};

// Target box [(0,0), (0,h), (w,h)]; w keeps the source aspect ratio when not given.
TextRegion make_region(std::string region_id, const Triangle& src, int dst_height,
                       std::optional<std::string> text = std::nullopt, int dst_width = 0);

// Output pixel (x, y) bilinearly samples the source at theta^-1 (x, y, 1); samples outside
// the source replicate the nearest edge pixel.
ImagePlane warp(const ImagePlane& image, const AffineParams& theta, int out_height, int out_width);

// Separable Gaussian, radius ceil(3 sigma), unit-sum kernel, replicate-edge padding.
ImagePlane lowpass(const ImagePlane& image, double sigma);
std::vector<double> gaussian_kernel(double sigma);

// LPF(f) + (g - LPF(g)), clamped to [-1, 1].
ImagePlane blend_crop(const ImagePlane& g_crop, const ImagePlane& f_crop, double sigma = 3.0);

struct PasteCoverage {
    int pixels_written = 0;
    int pixels_overwritten = 0;  // already written by an earlier crop in the list
    bool clipped = false;        // part of the crop footprint fell outside the base
};

struct PasteResult {
    ImagePlane image;
    std::vector<PasteCoverage> coverage;
};

// Each crop pairs with the forward map theta (base -> crop). Every base pixel whose
// theta-image lies inside the crop is replaced by a bilinear crop sample; later crops
// overwrite earlier ones.
PasteResult paste_regions(const ImagePlane& base, const std::vector<std::pair<ImagePlane, AffineParams>>& crops);

struct LineTiles {
    std::vector<ImagePlane> tiles;
    std::vector<int> starts;
    int line_width = 0;
    bool padded = false;
};

LineTiles slice_line(const ImagePlane& line, int tile_width = 480, int overlap = 16);

// Overlap zones cross-fade linearly, the incoming tile's weight rising left to right.
ImagePlane stitch_tiles(const std::vector<ImagePlane>& tiles, const std::vector<int>& starts, int line_width,
                        int overlap = 16);

}  // namespace glyphsr
