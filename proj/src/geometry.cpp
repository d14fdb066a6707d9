#include "glyphsr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "glyphsr/errors.hpp"

namespace glyphsr {

namespace {

constexpr double kDegenerateEps = 1e-9;

double triangle_det(const Triangle& t) {
    // det [[x0 y0 1], [x1 y1 1], [x2 y2 1]]
    return (t[1].x - t[0].x) * (t[2].y - t[0].y) - (t[2].x - t[0].x) * (t[1].y - t[0].y);
}

double sample_bilinear(const ImagePlane& img, double x, double y, int c) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = cx - x0;
    const double fy = cy - y0;
    const double top = img.at(y0, x0, c) + fx * (img.at(y0, x1, c) - img.at(y0, x0, c));
    const double bottom = img.at(y1, x0, c) + fx * (img.at(y1, x1, c) - img.at(y1, x0, c));
    return top + fy * (bottom - top);
}

}  // namespace

AffineParams compose(const AffineParams& a, const AffineParams& b) {
    AffineParams r;
    for (int row = 0; row < 2; ++row) {
        for (int col = 0; col < 3; ++col) {
            double v = a(row, 0) * b(0, col) + a(row, 1) * b(1, col);
            if (col == 2) v += a(row, 2);
            r.m[row * 3 + col] = v;
        }
    }
    return r;
}

AffineParams affine_from_boxes(const Triangle& src, const Triangle& dst) {
    const double det = triangle_det(src);
    if (std::abs(det) < kDegenerateEps) throw DegenerateTriangle("source triangle is collinear");
    if (std::abs(triangle_det(dst)) < kDegenerateEps) throw DegenerateTriangle("destination triangle is collinear");

    // Cramer's rule on [x y 1] * [a b c]^T = d for each output row.
    auto solve = [&](double d0, double d1, double d2) {
        const double e1 = d1 - d0;
        const double e2 = d2 - d0;
        const double dx1 = src[1].x - src[0].x, dy1 = src[1].y - src[0].y;
        const double dx2 = src[2].x - src[0].x, dy2 = src[2].y - src[0].y;
        const double a = (e1 * dy2 - e2 * dy1) / det;
        const double b = (dx1 * e2 - dx2 * e1) / det;
        const double c = d0 - a * src[0].x - b * src[0].y;
        return std::array<double, 3>{a, b, c};
    };
    const auto rx = solve(dst[0].x, dst[1].x, dst[2].x);
    const auto ry = solve(dst[0].y, dst[1].y, dst[2].y);
    return {{rx[0], rx[1], rx[2], ry[0], ry[1], ry[2]}};
}

AffineParams invert_affine(const AffineParams& t) {
    const double det = t.determinant();
    if (std::abs(det) < kDegenerateEps) throw SingularTransform("affine linear part is singular");
    const double a = t.m[4] / det;
    const double b = -t.m[1] / det;
    const double c = -t.m[3] / det;
    const double d = t.m[0] / det;
    return {{a, b, -(a * t.m[2] + b * t.m[5]), c, d, -(c * t.m[2] + d * t.m[5])}};
}

TextRegion make_region(std::string region_id, const Triangle& src, int dst_height, std::optional<std::string> text,
                       int dst_width) {
    if (dst_height <= 0) throw InvalidRange("region height must be positive");
    if (dst_width <= 0) {
        const double side = std::hypot(src[1].x - src[0].x, src[1].y - src[0].y);
        const double base = std::hypot(src[2].x - src[1].x, src[2].y - src[1].y);
        if (side < kDegenerateEps) throw DegenerateTriangle("region has zero height");
        dst_width = std::max(1, static_cast<int>(std::lround(base * dst_height / side)));
    }
    TextRegion r;
    r.region_id = std::move(region_id);
    r.src_triangle = src;
    r.dst_height = dst_height;
    r.dst_width = dst_width;
    const Triangle dst{Point{0.0, 0.0}, Point{0.0, static_cast<double>(dst_height)},
                       Point{static_cast<double>(dst_width), static_cast<double>(dst_height)}};
    r.theta = affine_from_boxes(src, dst);
    r.text = std::move(text);
    return r;
}

ImagePlane warp(const ImagePlane& image, const AffineParams& theta, int out_height, int out_width) {
    if (out_height <= 0 || out_width <= 0) throw InvalidRange("warp output size must be positive");
    const AffineParams inv = invert_affine(theta);
    ImagePlane out(out_height, out_width, image.channels);
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = sample_bilinear(image, s.x, s.y, c);
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma < 0.0) throw InvalidRange("sigma must be non-negative");
    if (sigma == 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

ImagePlane lowpass(const ImagePlane& image, double sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return image;
    const int r = static_cast<int>(k.size() / 2);
    const int h = image.height, w = image.width, ch = image.channels;

    ImagePlane tmp(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * image.at(y, std::clamp(x + i, 0, w - 1), c);
                tmp.at(y, x, c) = acc;
            }
        }
    }
    ImagePlane out(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(std::clamp(y + i, 0, h - 1), x, c);
                out.at(y, x, c) = acc;
            }
        }
    }
    return out;
}

ImagePlane blend_crop(const ImagePlane& g_crop, const ImagePlane& f_crop, double sigma) {
    require_same_shape(g_crop, f_crop, "blend_crop");
    const ImagePlane lf = lowpass(f_crop, sigma);
    const ImagePlane lg = lowpass(g_crop, sigma);
    ImagePlane out = lf;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += g_crop.data[i] - lg.data[i];
    return clamp_unit(std::move(out));
}

PasteResult paste_regions(const ImagePlane& base, const std::vector<std::pair<ImagePlane, AffineParams>>& crops) {
    PasteResult result{base, {}};
    std::vector<char> written(static_cast<std::size_t>(base.height) * base.width, 0);
    constexpr double kEdge = 1e-9;

    for (const auto& [crop, theta] : crops) {
        require_same_shape(ImagePlane(1, 1, crop.channels), ImagePlane(1, 1, base.channels), "paste_regions channels");
        PasteCoverage cov;
        const AffineParams inv = invert_affine(theta);
        const double cw = crop.width - 1, chh = crop.height - 1;

        // Footprint bounding box in base coordinates.
        double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
        for (Point corner : {Point{0, 0}, Point{cw, 0}, Point{0, chh}, Point{cw, chh}}) {
            const Point p = inv.apply(corner);
            minx = std::min(minx, p.x), maxx = std::max(maxx, p.x);
            miny = std::min(miny, p.y), maxy = std::max(maxy, p.y);
        }
        cov.clipped = minx < -kEdge || miny < -kEdge || maxx > base.width - 1 + kEdge || maxy > base.height - 1 + kEdge;
        const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
        const int x1 = std::min(base.width - 1, static_cast<int>(std::ceil(maxx)));
        const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
        const int y1 = std::min(base.height - 1, static_cast<int>(std::ceil(maxy)));

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Point t = theta.apply({static_cast<double>(x), static_cast<double>(y)});
                if (t.x < -kEdge || t.y < -kEdge || t.x > cw + kEdge || t.y > chh + kEdge) continue;
                for (int c = 0; c < base.channels; ++c) result.image.at(y, x, c) = sample_bilinear(crop, t.x, t.y, c);
                char& w = written[static_cast<std::size_t>(y) * base.width + x];
                if (w) ++cov.pixels_overwritten;
                w = 1;
                ++cov.pixels_written;
            }
        }
        result.coverage.push_back(cov);
    }
    return result;
}

LineTiles slice_line(const ImagePlane& line, int tile_width, int overlap) {
    if (tile_width <= 2 * overlap || overlap < 0) throw InvalidRange("tile width must exceed twice the overlap");
    LineTiles out;
    out.line_width = line.width;
    if (line.width <= tile_width) {
        out.padded = line.width < tile_width;
        ImagePlane tile(line.height, tile_width, line.channels);
        for (int y = 0; y < line.height; ++y) {
            for (int x = 0; x < tile_width; ++x) {
                for (int c = 0; c < line.channels; ++c) tile.at(y, x, c) = line.at(y, std::min(x, line.width - 1), c);
            }
        }
        out.tiles.push_back(std::move(tile));
        out.starts.push_back(0);
        return out;
    }
    const int stride = tile_width - overlap;
    out.starts.push_back(0);
    while (out.starts.back() + tile_width < line.width) {
        out.starts.push_back(std::min(out.starts.back() + stride, line.width - tile_width));
    }
    for (int s : out.starts) out.tiles.push_back(line.columns(s, tile_width));
    return out;
}

ImagePlane stitch_tiles(const std::vector<ImagePlane>& tiles, const std::vector<int>& starts, int line_width,
                        int overlap) {
    if (tiles.empty() || tiles.size() != starts.size()) throw InvalidRange("tiles and starts must be non-empty and paired");
    for (std::size_t i = 1; i < tiles.size(); ++i) {
        if (starts[i] <= starts[i - 1]) throw InvalidRange("tile starts must be strictly increasing");
        require_same_shape(tiles[i], tiles[0], "stitch_tiles");
    }
    const ImagePlane& first = tiles[0];
    ImagePlane out(first.height, line_width, first.channels);
    std::vector<char> covered(line_width, 0);

    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const ImagePlane& tile = tiles[i];
        const int s = starts[i];
        const int prev_end = i == 0 ? s : std::min(starts[i - 1] + tiles[i - 1].width, line_width);
        if (prev_end < s) throw GapBetweenTiles("gap before tile starting at column " + std::to_string(s));
        const int zone = prev_end - s;
        if (i > 0 && zone < overlap) throw InvalidRange("consecutive tiles overlap by fewer than the required columns");
        for (int x = 0; x < tile.width && s + x < line_width; ++x) {
            const int col = s + x;
            if (col < 0) continue;
            const double w = x < zone ? static_cast<double>(x + 1) / (zone + 1) : 1.0;
            for (int y = 0; y < tile.height; ++y) {
                for (int c = 0; c < tile.channels; ++c) {
                    double& dst = out.at(y, col, c);
                    dst = (x < zone && covered[col]) ? (1.0 - w) * dst + w * tile.at(y, x, c) : tile.at(y, x, c);
                }
            }
            covered[col] = 1;
        }
    }
    for (int x = 0; x < line_width; ++x) {
        if (!covered[x]) throw GapBetweenTiles("column " + std::to_string(x) + " is not covered by any tile");
    }
    return out;
}

}  // namespace glyphsr
