#include <doctest.h>

#include <fstream>

#include "glyphsr/errors.hpp"
#include "glyphsr/ocr.hpp"
#include "glyphsr/synth.hpp"
#include "glyphsr/textcodec.hpp"
#include "support.hpp"

using namespace glyphsr;

namespace {

std::string random_charset_string(KeyedRng& rng, const std::u32string& cs, int min_len, int max_len) {
    std::u32string s;
    const int n = rng.uniform_int(min_len, max_len);
    for (int i = 0; i < n; ++i) s += cs[rng.uniform_int(0, static_cast<int>(cs.size()) - 1)];
    return encode_utf8(s);
}

}  // namespace

TEST_CASE("template OCR reads a clean render with full confidence") {
    const auto& atlas = default_atlas();
    const auto r = template_recognize(render_text("A7", atlas, 48), atlas);
    CHECK(r.text == "A7");
    REQUIRE(r.per_char_confidence.size() == 2);
    for (double c : r.per_char_confidence) CHECK(c > 0.99);
}

TEST_CASE("template OCR returns nothing for background") {
    const auto& atlas = default_atlas();
    const auto r = template_recognize(testing::constant_plane(48, 240, 1, 1.0), atlas);
    CHECK(r.text.empty());
    CHECK(r.per_char_confidence.empty());
    // Line padding after the text is skipped as well.
    CHECK(template_recognize(fit_width(render_text("Q", atlas, 48), 240), atlas).text == "Q");
}

TEST_CASE("template OCR handles colour crops and other heights") {
    const auto& atlas = default_atlas();
    const ImagePlane g = render_text("K2", atlas, 32);
    ImagePlane rgb(g.height, g.width, 3);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = g.at(y, x);
    CHECK(template_recognize(rgb, atlas).text == "K2");
    CHECK(template_recognize(g, atlas).text == "K2");
}

TEST_CASE("noise lowers template OCR accuracy") {
    const auto& atlas = default_atlas();
    const ImagePlane clean = render_text("A7", atlas, 48);
    // Default blur/downsample ranges with the noise pinned at 0.3.
    DegradationConfig noisy;
    noisy.noise_std = {0.3, 0.3};
    int clean_ok = 0, noisy_ok = 0;
    for (int i = 0; i < 500; ++i) {
        clean_ok += template_recognize(degrade(clean, DegradationConfig::identity(), i), atlas).text == "A7";
        noisy_ok += template_recognize(degrade(clean, noisy, i), atlas).text == "A7";
    }
    INFO("clean ", clean_ok, " noisy ", noisy_ok);
    CHECK(clean_ok == 500);
    CHECK(noisy_ok < clean_ok);
}

TEST_CASE("property: clean renders are a fixed point of the template OCR") {
    const auto& atlas = default_atlas();
    KeyedRng rng{71, 0};
    for (int n = 0; n < 300; ++n) {
        const std::string s = random_charset_string(rng, atlas.charset, 1, 10);
        CHECK(template_recognize(render_text(s, atlas, 48), atlas).text == s);
    }
}

TEST_CASE("template OCR is deterministic") {
    const auto& atlas = default_atlas();
    const ImagePlane img = degrade(render_text("XY3", atlas, 48), DegradationConfig{}, 5);
    const auto a = template_recognize(img, atlas), b = template_recognize(img, atlas);
    CHECK(a.text == b.text);
    CHECK(a.per_char_confidence == b.per_char_confidence);
}

TEST_CASE("normalized cross-correlation") {
    const ImagePlane a = testing::random_plane(6, 6, 1, 1);
    ImagePlane b = a;
    for (double& v : b.data) v = 3 * v + 1;
    CHECK(normalized_cross_correlation(a, b) == doctest::Approx(1.0));
    for (double& v : b.data) v = -v;
    CHECK(normalized_cross_correlation(a, b) == doctest::Approx(-1.0));
    CHECK(normalized_cross_correlation(a, testing::constant_plane(6, 6, 1, 0.2)) == 0.0);
}

TEST_CASE("noisy oracle examples") {
    const std::u32string cs = default_atlas().charset;
    CHECK(noisy_oracle("HELLO", 0.0, cs, 1).text == "HELLO");
    const auto flipped = decode_utf8(noisy_oracle("HELLO\xE4\xB8\xAD", 1.0, cs, 1).text);
    const auto orig = decode_utf8("HELLO\xE4\xB8\xAD");
    REQUIRE(flipped.size() == orig.size());
    for (std::size_t i = 0; i < orig.size(); ++i) CHECK(flipped[i] != orig[i]);
    const auto r = noisy_oracle("AB", 0.25, cs, 3);
    CHECK(r.per_char_confidence == std::vector<double>{0.75, 0.75});
    CHECK_THROWS_AS(noisy_oracle("A", 1.5, cs, 1), InvalidRange);
    CHECK_THROWS_AS(noisy_oracle("A", -0.1, cs, 1), InvalidRange);
}

TEST_CASE("noisy oracle substitution rate over 10k characters") {
    const std::u32string cs = default_atlas().charset;
    KeyedRng rng{4, 4};
    std::u32string gt;
    for (int i = 0; i < 10000; ++i) gt += cs[rng.uniform_int(0, static_cast<int>(cs.size()) - 1)];
    const auto out = decode_utf8(noisy_oracle(encode_utf8(gt), 0.3, cs, 77).text);
    REQUIRE(out.size() == gt.size());
    int changed = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) changed += out[i] != gt[i];
    CHECK(std::abs(changed / 10000.0 - 0.3) < 0.02);
}

TEST_CASE("property: noisy oracle preserves length and is deterministic") {
    const std::u32string cs = default_atlas().charset;
    KeyedRng rng{9, 1};
    for (int n = 0; n < 200; ++n) {
        const std::string s = random_charset_string(rng, cs, 0, 12);
        const double rate = rng.uniform();
        const auto a = noisy_oracle(s, rate, cs, n);
        CHECK(decode_utf8(a.text).size() == decode_utf8(s).size());
        CHECK(a.text == noisy_oracle(s, rate, cs, n).text);
    }
}

TEST_CASE("subprocess OCR speaks the line protocol") {
    testing::TempDir dir("ocr");
    const auto script = dir / "ocr.sh";
    {
        std::ofstream out(script);
        out << "#!/bin/sh\nwhile read p; do if [ -f \"$p\" ]; then echo \"A7\"; else echo missing; fi; done\n";
    }
    SubprocessOcr ocr("sh " + script.string(), dir.path());
    const ImagePlane img = render_text("A7", default_atlas(), 48);
    CHECK(ocr.recognize(img) == "A7");
    CHECK(ocr.recognize(img) == "A7");
}

TEST_CASE("subprocess OCR reports a dead recognizer") {
    testing::TempDir dir("ocr_dead");
    SubprocessOcr ocr("exit 0", dir.path());
    CHECK_THROWS_AS(ocr.recognize(render_text("A", default_atlas(), 48)), IOFailure);
}
