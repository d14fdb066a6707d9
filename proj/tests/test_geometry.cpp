#include <doctest.h>

#include <cmath>
#include <numbers>

#include "glyphsr/errors.hpp"
#include "glyphsr/geometry.hpp"
#include "support.hpp"

using namespace glyphsr;
using testing::random_plane;

namespace {

void check_affine(const AffineParams& got, std::array<double, 6> want, double tol = 1e-9) {
    for (int i = 0; i < 6; ++i) CHECK(std::abs(got.m[i] - want[i]) < tol);
}

bool max_entry_diff_below(const AffineParams& a, const AffineParams& b, double tol) {
    for (int i = 0; i < 6; ++i) {
        if (std::abs(a.m[i] - b.m[i]) > tol) return false;
    }
    return true;
}

AffineParams random_affine(KeyedRng& rng) {
    for (;;) {
        AffineParams t{{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-50, 50), rng.uniform(-3, 3),
                        rng.uniform(-3, 3), rng.uniform(-50, 50)}};
        if (std::abs(t.determinant()) > 0.1) return t;
    }
}

// Independent bilinear sampler with edge replication.
double oracle_bilinear(const ImagePlane& img, double x, double y) {
    x = std::min(std::max(x, 0.0), img.width - 1.0);
    y = std::min(std::max(y, 0.0), img.height - 1.0);
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double ax = x - x0, ay = y - y0;
    return (1 - ax) * (1 - ay) * img.at(y0, x0) + ax * (1 - ay) * img.at(y0, x1) + (1 - ax) * ay * img.at(y1, x0) +
           ax * ay * img.at(y1, x1);
}

// Direct 2-D Gaussian filter with replicate edges, written without the separable shortcut.
ImagePlane oracle_lowpass(const ImagePlane& img, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    double z = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) z += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    ImagePlane out(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int sy = std::clamp(y + dy, 0, img.height - 1), sx = std::clamp(x + dx, 0, img.width - 1);
                    s += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) * img.at(sy, sx);
                }
            }
            out.at(y, x) = s / z;
        }
    }
    return out;
}

double l2(const ImagePlane& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("affine_from_boxes reproduces the worked examples") {
    check_affine(affine_from_boxes({{{0, 0}, {0, 1}, {1, 1}}}, {{{0, 0}, {0, 1}, {1, 1}}}), {1, 0, 0, 0, 1, 0});
    check_affine(affine_from_boxes({{{10, 20}, {10, 68}, {250, 68}}}, {{{0, 0}, {0, 48}, {240, 48}}}),
                 {1, 0, -10, 0, 1, -20});
    check_affine(affine_from_boxes({{{0, 0}, {0, 24}, {120, 24}}}, {{{0, 0}, {0, 48}, {240, 48}}}), {2, 0, 0, 0, 2, 0});
}

TEST_CASE("affine_from_boxes maps each source point onto its destination") {
    KeyedRng rng{1};
    for (int trial = 0; trial < 200; ++trial) {
        Triangle src, dst;
        for (auto& p : src) p = {rng.uniform(-100, 100), rng.uniform(-100, 100)};
        for (auto& p : dst) p = {rng.uniform(-100, 100), rng.uniform(-100, 100)};
        AffineParams t;
        try {
            t = affine_from_boxes(src, dst);
        } catch (const DegenerateTriangle&) {
            continue;
        }
        for (int i = 0; i < 3; ++i) {
            const Point q = t.apply(src[i]);
            CHECK(std::abs(q.x - dst[i].x) < 1e-6);
            CHECK(std::abs(q.y - dst[i].y) < 1e-6);
        }
    }
}

TEST_CASE("collinear triangles are rejected") {
    CHECK_THROWS_AS(affine_from_boxes({{{0, 0}, {1, 1}, {2, 2}}}, {{{0, 0}, {0, 1}, {1, 1}}}), DegenerateTriangle);
    CHECK_THROWS_AS(affine_from_boxes({{{0, 0}, {0, 1}, {1, 1}}}, {{{5, 5}, {5, 5}, {6, 6}}}), DegenerateTriangle);
}

TEST_CASE("invert_affine examples and round trips") {
    check_affine(invert_affine(AffineParams::identity()), {1, 0, 0, 0, 1, 0});
    check_affine(invert_affine({{2, 0, 4, 0, 2, 6}}), {0.5, 0, -2, 0, 0.5, -3});
    CHECK_THROWS_AS(invert_affine({{1, 2, 0, 2, 4, 0}}), SingularTransform);

    KeyedRng rng{2};
    for (int trial = 0; trial < 500; ++trial) {
        const AffineParams t = random_affine(rng);
        const AffineParams inv = invert_affine(t);
        CHECK(max_entry_diff_below(compose(t, inv), AffineParams::identity(), 1e-6));
        CHECK(max_entry_diff_below(compose(inv, t), AffineParams::identity(), 1e-6));
        CHECK(max_entry_diff_below(invert_affine(inv), t, 1e-6));
    }
}

TEST_CASE("affine_from_boxes with swapped arguments equals the inverse") {
    KeyedRng rng{3};
    for (int trial = 0; trial < 200; ++trial) {
        Triangle src, dst;
        for (auto& p : src) p = {rng.uniform(0, 300), rng.uniform(0, 300)};
        dst = {{{0, 0}, {0, 48}, {rng.uniform(40, 400), 48}}};
        AffineParams fwd;
        try {
            fwd = affine_from_boxes(src, dst);
        } catch (const DegenerateTriangle&) {
            continue;
        }
        if (std::abs(fwd.determinant()) < 1e-3) continue;
        CHECK(max_entry_diff_below(invert_affine(fwd), affine_from_boxes(dst, src), 1e-5));
    }
}

TEST_CASE("make_region maps its triangle onto the canonical target box") {
    KeyedRng rng{4};
    for (int trial = 0; trial < 100; ++trial) {
        const double angle = rng.uniform(-30, 30) * std::numbers::pi / 180;
        const double len = rng.uniform(50, 300), hgt = rng.uniform(10, 60);
        const Point o{rng.uniform(0, 100), rng.uniform(0, 100)};
        const Point down{-std::sin(angle) * hgt, std::cos(angle) * hgt};
        const Point along{std::cos(angle) * len, std::sin(angle) * len};
        const Triangle src{{o, {o.x + down.x, o.y + down.y}, {o.x + down.x + along.x, o.y + down.y + along.y}}};
        const TextRegion r = make_region("r", src, 48);
        CHECK(r.dst_width == static_cast<int>(std::lround(48 * len / hgt)));
        const Triangle dst{{{0, 0}, {0, 48.0}, {static_cast<double>(r.dst_width), 48.0}}};
        for (int i = 0; i < 3; ++i) {
            const Point q = r.theta.apply(src[i]);
            // The width is rounded to whole pixels, so the far corner is matched to that width.
            CHECK(std::abs(q.x - dst[i].x) < 1e-4);
            CHECK(std::abs(q.y - dst[i].y) < 1e-4);
        }
    }
}

TEST_CASE("warp examples") {
    const ImagePlane img = random_plane(20, 30, 1, 5);
    const ImagePlane same = warp(img, AffineParams::identity(), 20, 30);
    CHECK(max_abs_diff(same, img) == 0.0);

    const ImagePlane flat(25, 35, 1, 0.3);
    const ImagePlane moved = warp(flat, {{1, 0, -10, 0, 1, -20}}, 25, 35);
    for (double v : moved.data) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

    ImagePlane board(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) board.at(y, x) = (x + y) % 2 ? 1.0 : -1.0;
    const ImagePlane up = warp(board, AffineParams::scaling(2), 16, 16);
    double worst = 0.0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) worst = std::max(worst, std::abs(up.at(y, x) - oracle_bilinear(board, x / 2.0, y / 2.0)));
    CHECK(worst < 1e-6);

    CHECK_THROWS_AS(warp(img, {{1, 1, 0, 1, 1, 0}}, 4, 4), SingularTransform);
}

TEST_CASE("lowpass examples") {
    const ImagePlane img = random_plane(17, 23, 1, 6);
    CHECK(max_abs_diff(lowpass(img, 0.0), img) == 0.0);

    const ImagePlane flat(30, 30, 1, -0.4);
    CHECK(max_abs_diff(lowpass(flat, 2.5), flat) < 1e-6);

    ImagePlane impulse(41, 41, 1, 0.0);
    impulse.at(20, 20) = 1.0;
    const ImagePlane resp = lowpass(impulse, 3.0);
    double sum = 0.0, worst = 0.0;
    double z = 0.0;
    for (int k = -9; k <= 9; ++k) z += std::exp(-k * k / 18.0);
    for (int y = 0; y < 41; ++y) {
        for (int x = 0; x < 41; ++x) {
            sum += resp.at(y, x);
            const int dy = y - 20, dx = x - 20;
            const double want = std::abs(dx) <= 9 && std::abs(dy) <= 9
                                    ? std::exp(-dx * dx / 18.0) * std::exp(-dy * dy / 18.0) / (z * z)
                                    : 0.0;
            worst = std::max(worst, std::abs(resp.at(y, x) - want));
        }
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(worst < 1e-12);

    const auto k = gaussian_kernel(3.0);
    CHECK(k.size() == 19);
}

TEST_CASE("lowpass matches a direct 2-D convolution") {
    const ImagePlane img = random_plane(20, 26, 1, 7);
    CHECK(max_abs_diff(lowpass(img, 1.7), oracle_lowpass(img, 1.7)) < 1e-10);
}

TEST_CASE("lowpass keeps the mean when the border band is background") {
    // Replicate padding conserves mass once the outer band of kernel radius is constant.
    KeyedRng rng{8};
    for (int trial = 0; trial < 20; ++trial) {
        const double sigma = rng.uniform(0.5, 3.0);
        const int r = static_cast<int>(std::ceil(3 * sigma));
        const double bg = rng.uniform(-1, 1);
        ImagePlane img(40 + 2 * r, 60 + 2 * r, 1, bg);
        for (int y = r; y < img.height - r; ++y)
            for (int x = r; x < img.width - r; ++x) img.at(y, x) = rng.uniform(-1, 1);
        auto mean = [](const ImagePlane& p) {
            double s = 0.0;
            for (double v : p.data) s += v;
            return s / p.data.size();
        };
        CHECK(std::abs(mean(lowpass(img, sigma)) - mean(img)) < 1e-5);
    }
}

TEST_CASE("blend_crop examples") {
    const ImagePlane f = lowpass(random_plane(48, 96, 1, 9, -0.5, 0.5), 2.0);
    CHECK(max_abs_diff(blend_crop(f, f), f) < 1e-6);

    ImagePlane shifted = f;
    for (double& v : shifted.data) v += 0.3;
    CHECK(max_abs_diff(blend_crop(shifted, f), f) < 1e-6);

    ImagePlane h(48, 96, 1);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 96; ++x) h.at(y, x) = ((x + y) % 2 ? 0.1 : -0.1);
    ImagePlane g = f;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += h.data[i];
    const ImagePlane out = blend_crop(g, f);
    ImagePlane leak = out;
    for (std::size_t i = 0; i < leak.size(); ++i) leak.data[i] -= f.data[i] + h.data[i];
    CHECK(l2(leak) < 0.1 * l2(h));
    // The leakage is exactly the low-pass part of h.
    const ImagePlane lh = oracle_lowpass(h, 3.0);
    for (std::size_t i = 0; i < leak.size(); ++i) CHECK(std::abs(leak.data[i] + lh.data[i]) < 1e-9);

    CHECK_THROWS_AS(blend_crop(f, random_plane(48, 95, 1, 1)), ShapeMismatch);
}

TEST_CASE("blend_crop is idempotent when the crops differ by a constant") {
    const ImagePlane f = lowpass(random_plane(48, 96, 1, 10, -0.5, 0.5), 1.0);
    ImagePlane g = f;
    for (double& v : g.data) v -= 0.2;
    const ImagePlane once = blend_crop(g, f);
    CHECK(max_abs_diff(blend_crop(once, f), once) < 1e-5);
}

TEST_CASE("paste_regions examples") {
    const ImagePlane base = random_plane(60, 80, 1, 11);
    const auto none = paste_regions(base, {});
    CHECK(max_abs_diff(none.image, base) == 0.0);
    CHECK(none.coverage.empty());

    const ImagePlane crop = random_plane(60, 80, 1, 12);
    const auto full = paste_regions(base, {{crop, AffineParams::identity()}});
    CHECK(max_abs_diff(full.image, crop) == 0.0);
    CHECK(full.coverage[0].pixels_written == 60 * 80);
    CHECK_FALSE(full.coverage[0].clipped);

    const AffineParams ta{{1, 0, -5, 0, 1, -5}}, tb{{1, 0, -50, 0, 1, -30}};
    const ImagePlane ca = random_plane(20, 30, 1, 13), cb = random_plane(20, 25, 1, 14);
    const auto both = paste_regions(base, {{ca, ta}, {cb, tb}});
    const auto seq = paste_regions(paste_regions(base, {{ca, ta}}).image, {{cb, tb}});
    CHECK(max_abs_diff(both.image, seq.image) == 0.0);
    CHECK(both.coverage[1].pixels_overwritten == 0);

    // Overlap: the later crop wins.
    const AffineParams tc{{1, 0, -10, 0, 1, -10}};
    const ImagePlane cc(20, 30, 1, 0.77);
    const auto over = paste_regions(base, {{ca, ta}, {cc, tc}});
    CHECK(over.image.at(15, 15) == 0.77);
    CHECK(over.coverage[1].pixels_overwritten > 0);

    const auto clip = paste_regions(base, {{ca, AffineParams{{1, 0, 10, 0, 1, 10}}}});
    CHECK(clip.coverage[0].clipped);
    for (int y = 10; y < 60; ++y)
        for (int x = 20; x < 80; ++x) CHECK(clip.image.at(y, x) == base.at(y, x));
}

TEST_CASE("warp then paste then warp reproduces the crop") {
    KeyedRng rng{15};
    const ImagePlane base = lowpass(random_plane(200, 260, 1, 16), 1.5);
    for (int trial = 0; trial < 12; ++trial) {
        const double angle = rng.uniform(-30, 30) * std::numbers::pi / 180;
        const Point o{rng.uniform(60, 120), rng.uniform(40, 90)};
        const double len = 100, hgt = 30;
        const Point down{-std::sin(angle) * hgt, std::cos(angle) * hgt};
        const Point along{std::cos(angle) * len, std::sin(angle) * len};
        const Triangle src{{o, {o.x + down.x, o.y + down.y}, {o.x + down.x + along.x, o.y + down.y + along.y}}};
        const TextRegion r = make_region("r", src, 48);
        const ImagePlane crop = warp(base, r.theta, r.dst_height, r.dst_width);
        const ImagePlane pasted = paste_regions(base, {{crop, r.theta}}).image;
        const ImagePlane again = warp(pasted, r.theta, r.dst_height, r.dst_width);
        CHECK(psnr(again, crop) > 40.0);
    }
}

TEST_CASE("slice_line examples") {
    const auto one = slice_line(random_plane(48, 480, 1, 17));
    CHECK(one.tiles.size() == 1);
    CHECK_FALSE(one.padded);

    const auto two = slice_line(random_plane(48, 944, 1, 18));
    REQUIRE(two.starts.size() == 2);
    CHECK(two.starts[0] == 0);
    CHECK(two.starts[1] == 464);

    const ImagePlane short_line = random_plane(48, 200, 1, 19);
    const auto pad = slice_line(short_line);
    REQUIRE(pad.tiles.size() == 1);
    CHECK(pad.padded);
    CHECK(pad.line_width == 200);
    CHECK(pad.tiles[0].width == 480);
    CHECK(pad.tiles[0].at(7, 300) == short_line.at(7, 199));

    CHECK_THROWS_AS(slice_line(short_line, 32, 16), InvalidRange);
}

TEST_CASE("stitch_tiles examples") {
    const ImagePlane t = random_plane(48, 480, 1, 20);
    CHECK(max_abs_diff(stitch_tiles({t}, {0}, 480), t) == 0.0);

    const ImagePlane line = random_plane(48, 944, 1, 21);
    const auto s = slice_line(line);
    CHECK(max_abs_diff(stitch_tiles(s.tiles, s.starts, 944), line) <= 1e-6);

    const ImagePlane a(4, 480, 1, 1.0), b(4, 480, 1, -1.0);
    const ImagePlane ab = stitch_tiles({a, b}, {0, 464}, 944);
    for (int k = 0; k < 16; ++k) CHECK(ab.at(2, 464 + k) == doctest::Approx(1.0 - 2.0 * (k + 1) / 17.0).epsilon(1e-12));
    CHECK(ab.at(0, 463) == 1.0);
    CHECK(ab.at(0, 480) == -1.0);

    CHECK_THROWS_AS(stitch_tiles({a, b}, {0, 500}, 980), GapBetweenTiles);
}

TEST_CASE("stitch inverts slice for any line at least one tile wide") {
    KeyedRng rng{22};
    for (int trial = 0; trial < 30; ++trial) {
        const int w = rng.uniform_int(480, 3000);
        const int tile = rng.uniform_int(40, 480), overlap = rng.uniform_int(1, tile / 2 - 1);
        if (w < tile) continue;
        const ImagePlane line = random_plane(8, w, trial % 2 ? 3 : 1, 100 + trial);
        const auto s = slice_line(line, tile, overlap);
        CHECK(max_abs_diff(stitch_tiles(s.tiles, s.starts, w, overlap), line) <= 1e-6);
    }
}
