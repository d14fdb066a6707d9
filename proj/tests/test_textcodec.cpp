#include <doctest.h>

#include "glyphsr/errors.hpp"
#include "glyphsr/textcodec.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace glyphsr;

namespace {

std::vector<int> head(const ByteTokenSeq& s, int n) { return {s.ids.begin(), s.ids.begin() + n}; }

}  // namespace

TEST_CASE("tokenize examples") {
    const auto empty = tokenize("", 64);
    CHECK(empty.length() == 64);
    CHECK(empty.ids[0] == kEosId);
    CHECK(empty.ids[1] == kPadId);
    CHECK(empty.mask[0] == 1);
    CHECK(empty.mask[1] == 0);

    CHECK(head(tokenize("A", 64), 3) == std::vector<int>{68, 1, 0});
    CHECK(head(tokenize("\xE4\xB8\xAD", 64), 5) == std::vector<int>{231, 187, 176, 1, 0});
}

TEST_CASE("tokenize truncates and flags") {
    const auto s = tokenize("abcdef", 4);
    CHECK(s.truncated);
    // Keeps max_len - 1 bytes and no EOS.
    CHECK(s.ids == std::vector<int>{100, 101, 102, kPadId});
    CHECK(s.mask == std::vector<std::uint8_t>{1, 1, 1, 0});
    const auto fits = tokenize("abc", 4);
    CHECK_FALSE(fits.truncated);
    CHECK(fits.ids.back() == kEosId);
}

TEST_CASE("detokenize examples") {
    ByteTokenSeq s;
    s.ids = {2, 68, 1, 0};
    s.mask = {1, 1, 1, 0};
    CHECK(detokenize(s) == "\xEF\xBF\xBD" "A");
    CHECK(detokenize(tokenize("", 8)) == "");
    CHECK(detokenize(tokenize("\xE4\xB8\xAD\xE6\x96\x87", 16)) == "\xE4\xB8\xAD\xE6\x96\x87");
}

TEST_CASE("detokenize replaces a dangling multibyte prefix") {
    ByteTokenSeq s;
    s.ids = {0xE4 + kByteOffset, 'x' + kByteOffset, kEosId};
    s.mask = {1, 1, 1};
    const std::string out = detokenize(s);
    CHECK(is_valid_utf8(out));
    CHECK(out == "\xEF\xBF\xBD" "x");
}

TEST_CASE("property: round trip and id range over random valid strings") {
    KeyedRng rng{2024, 1};
    for (int n = 0; n < 2000; ++n) {
        const std::string s = testing::random_text(rng, 63);
        const auto seq = tokenize(s, 64);
        REQUIRE_FALSE(seq.truncated);
        CHECK(detokenize(seq) == s);
        for (int i = 0; i < seq.length(); ++i) {
            CHECK(seq.ids[i] >= 0);
            CHECK(seq.ids[i] < kVocabSize);
            CHECK(seq.mask[i] == (seq.ids[i] != kPadId));
        }
        // Byte ids follow the raw UTF-8 bytes.
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(seq.ids[i] == static_cast<unsigned char>(s[i]) + kByteOffset);
    }
}

TEST_CASE("utf8 helpers agree with the independent encoder") {
    for (char32_t cp : {U'a', U'é', U'中', U'\U0001F600'}) {
        CHECK(encode_utf8(cp) == testing::utf8(cp));
        CHECK(decode_utf8(testing::utf8(cp)) == std::vector<char32_t>{cp});
    }
    CHECK_FALSE(is_valid_utf8("\xC3"));
    CHECK_FALSE(is_valid_utf8("\xC0\xAF"));
}

namespace {

TextEncoderConfig small_encoder() {
    TextEncoderConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.n_heads = 2;
    c.n_layers = 2;
    c.max_len = 4;
    return c;
}

}  // namespace

TEST_CASE("encoder: all-PAD rows are zero and shapes follow the config") {
    nn::ParamStore store(3);
    TextEncoder enc(store, small_encoder());
    testing::randomize(store, 5);
    const auto f = enc.encode({tokenize("ab", 4), tokenize("", 4)});
    REQUIRE(f.values.shape() == nn::Shape{2, 4, 8});
    // "" -> EOS then three PADs.
    for (int m = 1; m < 4; ++m)
        for (int e = 0; e < 8; ++e) CHECK(f.values.values()[(4 + m) * 8 + e] == 0.0);

    ByteTokenSeq pad;
    pad.ids.assign(4, kPadId);
    pad.mask.assign(4, 0);
    const auto z = enc.encode({pad});
    for (double v : z.values.values()) CHECK(v == 0.0);
}

TEST_CASE("encoder: ids under PAD positions do not matter") {
    nn::ParamStore store(3);
    TextEncoder enc(store, small_encoder());
    testing::randomize(store, 6);
    auto a = tokenize("x", 4);
    auto b = a;
    b.ids[3] = 150;  // masked, so treated as PAD
    const auto fa = enc.encode({a}), fb = enc.encode({b});
    CHECK(fa.values.values() == fb.values.values());
}

TEST_CASE("encoder: wrong sequence length is a shape mismatch") {
    nn::ParamStore store(3);
    TextEncoder enc(store, small_encoder());
    CHECK_THROWS_AS(enc.encode({tokenize("x", 5)}), ShapeMismatch);
}

TEST_CASE("encoder matches the dense reference") {
    nn::ParamStore store(3);
    const auto cfg = small_encoder();
    TextEncoder enc(store, cfg);
    testing::randomize(store, 7);
    nn::MatmulPrecisionGuard exact(nn::MatmulPrecision::Double);
    const std::vector<ByteTokenSeq> batch{tokenize("Hi", 4), tokenize("", 4), tokenize("\xE4\xB8\xAD", 4)};
    const auto f = enc.encode(batch);
    const ref::Weights W(store);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto want = ref::encode(W, cfg, batch[b]);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(f.values.values()[b * want.size() + i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
}

TEST_CASE("encoder matches the dense reference with a projection") {
    nn::ParamStore store(4);
    auto cfg = small_encoder();
    cfg.projection_dim = 6;
    TextEncoder enc(store, cfg);
    testing::randomize(store, 8);
    nn::MatmulPrecisionGuard exact(nn::MatmulPrecision::Double);
    const auto seq = tokenize("ok", 4);
    const auto f = enc.encode({seq});
    const auto want = ref::encode(ref::Weights(store), cfg, seq);
    REQUIRE(f.values.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(f.values.values()[i] == doctest::Approx(want[i]).epsilon(1e-5));
}

TEST_CASE("encoder gradients match central differences") {
    nn::ParamStore store(3);
    TextEncoder enc(store, small_encoder());
    testing::randomize(store, 9);
    const std::vector<ByteTokenSeq> batch{tokenize("ab", 4), tokenize("c", 4)};
    // Fixed random weighting so every output entry contributes.
    KeyedRng rng{10, 0};
    std::vector<double> wts(2 * 4 * 8);
    for (double& v : wts) v = rng.uniform(-1.0, 1.0);
    const auto rep = testing::check_gradients(store, [&] {
        const auto f = enc.encode(batch);
        return nn::sum(nn::mul(f.values, nn::Tensor::from_data(f.values.shape(), wts)));
    });
    INFO(rep.worst_name);
    CHECK(rep.checked > 0);
    CHECK(rep.worst_rel < 1e-4);
}

TEST_CASE("frozen encoder parameters do not track gradients") {
    nn::ParamStore store(3);
    auto cfg = small_encoder();
    cfg.trainable = false;
    TextEncoder enc(store, cfg);
    for (const auto& p : store.entries()) CHECK_FALSE(p.tensor.requires_grad());
}
