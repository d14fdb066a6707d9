#include <doctest.h>

#include <cmath>
#include <fstream>

#include "glyphsr/errors.hpp"
#include "glyphsr/pipeline.hpp"
#include "glyphsr/png_io.hpp"
#include "glyphsr/synth.hpp"
#include "support.hpp"

using namespace glyphsr;

TEST_CASE("bicubic: factor 1 is the identity, constants stay constant") {
    const ImagePlane img = testing::random_plane(7, 9, 3, 1);
    CHECK(bicubic_upscale(img, 1).data == img.data);
    const ImagePlane c = testing::constant_plane(5, 6, 1, -0.4);
    for (int k : {2, 4}) {
        const ImagePlane u = bicubic_upscale(c, k);
        CHECK(u.height == 5 * k);
        CHECK(u.width == 6 * k);
        for (double v : u.data) CHECK(v == doctest::Approx(-0.4).epsilon(1e-12));
    }
    CHECK_THROWS_AS(bicubic_upscale(c, 3), InvalidRange);
}

TEST_CASE("bicubic: 2x on a linear ramp matches the analytic ramp away from borders") {
    ImagePlane ramp(20, 30, 1);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 30; ++x) ramp.at(y, x) = -0.9 + 0.05 * x + 0.02 * y;
    const ImagePlane u = bicubic_upscale(ramp, 2);
    for (int y = 4; y < 36; ++y)
        for (int x = 4; x < 56; ++x) {
            // Output pixel centre maps to source coordinate (o + 0.5) / 2 - 0.5.
            const double sx = (x + 0.5) / 2 - 0.5, sy = (y + 0.5) / 2 - 0.5;
            CHECK(std::abs(u.at(y, x) - (-0.9 + 0.05 * sx + 0.02 * sy)) < 1e-3);
        }
}

TEST_CASE("scale_theta keeps the linear part and scales the translation") {
    AffineParams t{{0.8, -0.2, 13.0, 0.3, 1.1, -7.0}};
    const AffineParams s = scale_theta(t, 4);
    CHECK(s.m[0] == doctest::Approx(0.8));
    CHECK(s.m[1] == doctest::Approx(-0.2));
    CHECK(s.m[3] == doctest::Approx(0.3));
    CHECK(s.m[4] == doctest::Approx(1.1));
    CHECK(s.m[2] == doctest::Approx(52.0));
    CHECK(s.m[5] == doctest::Approx(-28.0));
    const Point p{3.5, 9.0};
    const Point a = s.apply({p.x * 4, p.y * 4}), b = t.apply(p);
    CHECK(a.x == doctest::Approx(b.x * 4));
    CHECK(a.y == doctest::Approx(b.y * 4));
}

namespace {

const RestoreFn identity_restorer = [](const ImagePlane& c, const MaybeText&, const GuidanceConfig&) { return c; };
const RestoreFn invert_restorer = [](const ImagePlane& c, const MaybeText&, const GuidanceConfig&) {
    ImagePlane out = c;
    for (double& v : out.data) v = -v;
    return out;
};

std::function<RecognizeFn(const TextRegion&)> constant_ocr(std::string s = "A") {
    return [s](const TextRegion&) { return [s](const ImagePlane&) { return s; }; };
}

TextRegion axis_region(const std::string& id, double x, double y, double w, double h, int dst_h) {
    return make_region(id, {Point{x, y}, Point{x, y + h}, Point{x + w, y + h}}, dst_h);
}

TextRegion rotated_region(const std::string& id, double cx, double cy, double w, double h, double deg, int dst_h) {
    const double a = deg * M_PI / 180.0, c = std::cos(a), s = std::sin(a);
    auto at = [&](double u, double v) { return Point{cx + c * u - s * v, cy + s * u + c * v}; };
    return make_region(id, {at(-w / 2, -h / 2), at(-w / 2, h / 2), at(w / 2, h / 2)}, dst_h);
}

// Base pixels whose forward image lands within one pixel of the crop.
bool near_footprint(const TextRegion& r, int k, int y, int x) {
    const Point q = scale_theta(r.theta, k).apply({static_cast<double>(x), static_cast<double>(y)});
    return q.x > -1.5 && q.y > -1.5 && q.x < r.dst_width * k + 0.5 && q.y < r.dst_height * k + 0.5;
}

ImagePlane page(int h, int w, std::uint64_t seed) {
    ImagePlane img = testing::random_plane(h, w, 3, seed, -0.3, 0.8);
    return img;
}

}  // namespace

TEST_CASE("no regions gives exactly f(I)") {
    const ImagePlane img = page(40, 60, 1);
    BicubicUpscaler f;
    for (int k : {1, 2, 4}) {
        PipelineOptions opt;
        opt.factor = k;
        const auto r = restore_full_image(img, {}, f, identity_restorer, {}, constant_ocr(), opt);
        CHECK(r.image.data == bicubic_upscale(img, k).data);
        CHECK(r.image.height == 40 * k);
        CHECK(r.image.width == 60 * k);
        CHECK(r.report.regions.empty());
    }
}

TEST_CASE("a restored crop equal to its background crop cancels in the blend") {
    // Gray page so the gray line and the colour background agree.
    ImagePlane img = testing::random_plane(100, 300, 1, 2, -0.5, 0.5);
    BicubicUpscaler f;
    PipelineOptions opt;
    opt.factor = 1;
    opt.line_width = 240;
    const auto region = axis_region("r", 20, 30, 240, 48, 48);
    const auto r = restore_full_image(img, {region}, f, identity_restorer, {}, constant_ocr(), opt);
    CHECK(max_abs_diff(r.image, img) < 1e-5);
    CHECK(r.report.regions_processed == 1);
}

TEST_CASE("two disjoint regions compose like two single-region runs") {
    const ImagePlane img = page(120, 200, 3);
    BicubicUpscaler f;
    PipelineOptions opt;
    opt.factor = 2;
    opt.line_width = 96;
    const auto a = rotated_region("a", 50, 30, 80, 20, 12, 24);
    const auto b = rotated_region("b", 130, 90, 90, 24, -20, 24);
    const auto both = restore_full_image(img, {a, b}, f, invert_restorer, {}, constant_ocr(), opt).image;
    const auto only_a = restore_full_image(img, {a}, f, invert_restorer, {}, constant_ocr(), opt).image;
    const auto only_b = restore_full_image(img, {b}, f, invert_restorer, {}, constant_ocr(), opt).image;
    const ImagePlane fI = bicubic_upscale(img, 2);
    int touched_a = 0, touched_b = 0;
    for (std::size_t i = 0; i < fI.size(); ++i) {
        const bool in_a = only_a.data[i] != fI.data[i], in_b = only_b.data[i] != fI.data[i];
        REQUIRE_FALSE((in_a && in_b));
        touched_a += in_a;
        touched_b += in_b;
        const double want = in_a ? only_a.data[i] : (in_b ? only_b.data[i] : fI.data[i]);
        CHECK(both.data[i] == want);
    }
    CHECK(touched_a > 1000);
    CHECK(touched_b > 1000);
}

TEST_CASE("property: pixels away from every region equal f(I), output shape scales") {
    BicubicUpscaler f;
    KeyedRng rng{6, 6};
    for (int trial = 0; trial < 4; ++trial) {
        const int k = trial % 2 ? 2 : 4;
        const ImagePlane img = page(90, 140, 10 + trial);
        std::vector<TextRegion> regions;
        for (int i = 0; i < 2; ++i)
            regions.push_back(rotated_region("r" + std::to_string(i), rng.uniform(40, 100), rng.uniform(25, 65),
                                             rng.uniform(40, 70), rng.uniform(12, 20), rng.uniform(-30, 30), 16));
        PipelineOptions opt;
        opt.factor = k;
        opt.line_width = 64;
        const auto r = restore_full_image(img, regions, f, invert_restorer, {}, constant_ocr(), opt);
        const ImagePlane fI = bicubic_upscale(img, k);
        REQUIRE(r.image.same_shape(fI));
        int outside = 0;
        for (int y = 0; y < fI.height; ++y)
            for (int x = 0; x < fI.width; ++x) {
                bool near = false;
                for (const auto& reg : regions) near = near || near_footprint(reg, k, y, x);
                if (near) continue;
                ++outside;
                for (int c = 0; c < 3; ++c) CHECK(r.image.at(y, x, c) == fI.at(y, x, c));
            }
        CHECK(outside > 0);
    }
}

TEST_CASE("report counts cover processed, clipped and failed regions") {
    const ImagePlane img = page(80, 120, 4);
    BicubicUpscaler f;
    PipelineOptions opt;
    opt.factor = 2;
    opt.line_width = 96;
    const std::vector<TextRegion> regions{axis_region("ok", 10, 10, 60, 20, 24), axis_region("edge", 90, 60, 60, 30, 24),
                                          axis_region("bad", 10, 40, 50, 20, 24)};
    const auto ocr_for = [](const TextRegion& r) -> RecognizeFn {
        if (r.region_id == "bad") return [](const ImagePlane&) -> std::string { throw IOFailure("recognizer died"); };
        return [](const ImagePlane&) { return std::string("Z"); };
    };
    const auto res = restore_full_image(img, regions, f, invert_restorer, {}, ocr_for, opt);
    const auto& rep = res.report;
    CHECK(rep.regions_processed == 1);
    CHECK(rep.regions_clipped == 1);
    CHECK(rep.failures == 1);
    CHECK(rep.regions_processed + rep.regions_clipped + rep.failures == 3);
    REQUIRE(rep.regions.size() == 3);
    CHECK(rep.regions[0].transcripts == std::vector<std::string>{"Z"});
    CHECK(rep.regions[2].status == RegionStatus::Failed);
    CHECK(rep.regions[2].error.find("recognizer died") != std::string::npos);
    // The failed region leaves f(I) alone.
    const ImagePlane fI = bicubic_upscale(img, 2);
    for (int y = 90; y < 110; ++y)
        for (int x = 30; x < 100; ++x) CHECK(res.image.at(y, x, 0) == fI.at(y, x, 0));
    const auto j = report_json(rep);
    CHECK(j["failures"] == 1);
    CHECK(j["regions"][1]["status"] == "clipped");
}

TEST_CASE("restore_line tiles long lines and crops padded ones") {
    const ImagePlane line = testing::random_plane(24, 300, 1, 5);
    GuidanceConfig g;
    int ocr = 0;
    const RecognizeFn count = [&](const ImagePlane&) { return std::to_string(ocr++); };
    const auto r = restore_line(line, 128, g, count, identity_restorer, 16);
    CHECK(r.tiles == 3);
    CHECK(r.restore_calls == 3);
    CHECK(r.ocr_calls == 3);
    CHECK(r.transcripts == std::vector<std::string>{"0", "1", "2"});
    CHECK(max_abs_diff(r.image, line) < 1e-12);

    const ImagePlane short_line = testing::random_plane(24, 50, 1, 6);
    const auto s = restore_line(short_line, 128, g, count, identity_restorer, 16);
    CHECK(s.tiles == 1);
    CHECK(s.image.data == short_line.data);
}

TEST_CASE("region manifest parsing") {
    testing::TempDir dir("regions");
    {
        std::ofstream out(dir / "r.jsonl");
        out << R"({"region_id":"a","image_id":"p","src_triangle":[[10,20],[10,44],[110,44]],"text":"AB"})" << "\n\n";
        out << R"({"region_id":"b","image_id":"p","src_triangle":[[0,0],[0,12],[30,12]],"text":null})" << "\n";
    }
    const auto rs = read_region_manifest(dir / "r.jsonl", 48);
    REQUIRE(rs.size() == 2);
    CHECK(rs[0].region_id == "a");
    CHECK(rs[0].text == std::optional<std::string>("AB"));
    CHECK(rs[0].dst_height == 48);
    CHECK(rs[0].dst_width == 200);
    CHECK_FALSE(rs[1].text.has_value());
    CHECK(rs[1].dst_width == 120);

    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"region_id":"a","src_triangle":[[10,20],[10,44]]})" << "\n";
    }
    CHECK_THROWS_AS(read_region_manifest(dir / "bad.jsonl", 48), ConfigError);
    CHECK_THROWS_AS(read_region_manifest(dir / "missing.jsonl", 48), IOFailure);
}

TEST_CASE("subprocess upscaler contract") {
    testing::TempDir dir("up");
    const auto script = dir / "up.sh";
    {
        // Copies the input unchanged, so the size check must fire.
        std::ofstream out(script);
        out << "#!/bin/sh\nwhile read in k out; do cp \"$in\" \"$out\"; echo done; done\n";
    }
    SubprocessUpscaler up("sh " + script.string(), dir.path());
    const ImagePlane img = testing::random_plane(4, 5, 3, 1, -1, 1);
    CHECK(up.upscale(img, 1).same_shape(img));
    CHECK_THROWS_AS(up.upscale(img, 2), ShapeMismatch);
}
