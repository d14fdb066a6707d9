#include "glyphsr/textcodec.hpp"

#include <cmath>

#include "glyphsr/errors.hpp"

namespace glyphsr {

namespace {

// Length of the well-formed UTF-8 sequence starting at s[i], or 0 if ill-formed.
// When ill-formed, *consumed gets the length of the maximal invalid subpart.
int utf8_sequence(std::string_view s, std::size_t i, char32_t* cp, int* consumed) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t value = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (b0 < 0x80) {
        *cp = b0;
        *consumed = 1;
        return 1;
    } else if (b0 >= 0xC2 && b0 <= 0xDF) {
        len = 2, value = b0 & 0x1F;
    } else if (b0 >= 0xE0 && b0 <= 0xEF) {
        len = 3, value = b0 & 0x0F;
        if (b0 == 0xE0) lo = 0xA0;
        if (b0 == 0xED) hi = 0x9F;
    } else if (b0 >= 0xF0 && b0 <= 0xF4) {
        len = 4, value = b0 & 0x07;
        if (b0 == 0xF0) lo = 0x90;
        if (b0 == 0xF4) hi = 0x8F;
    } else {
        *consumed = 1;
        return 0;
    }
    for (int k = 1; k < len; ++k) {
        if (i + k >= s.size()) {
            *consumed = k;
            return 0;
        }
        const auto b = static_cast<unsigned char>(s[i + k]);
        if (b < lo || b > hi) {
            *consumed = k;
            return 0;
        }
        lo = 0x80, hi = 0xBF;
        value = (value << 6) | (b & 0x3F);
    }
    *cp = value;
    *consumed = len;
    return len;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
    for (std::size_t i = 0; i < s.size();) {
        char32_t cp;
        int consumed;
        if (!utf8_sequence(s, i, &cp, &consumed)) return false;
        i += consumed;
    }
    return true;
}

std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    for (std::size_t i = 0; i < s.size();) {
        char32_t cp = 0xFFFD;
        int consumed = 1;
        if (!utf8_sequence(s, i, &cp, &consumed)) cp = 0xFFFD;
        out.push_back(cp);
        i += consumed;
    }
    return out;
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
}

std::string encode_utf8(const std::u32string& cps) {
    std::string out;
    for (char32_t cp : cps) out += encode_utf8(cp);
    return out;
}

ByteTokenSeq tokenize(std::string_view text, int max_len) {
    if (max_len < 1) throw InvalidRange("token length must be at least 1");
    ByteTokenSeq seq;
    seq.ids.assign(max_len, kPadId);
    seq.mask.assign(max_len, 0);
    const std::size_t limit = static_cast<std::size_t>(max_len) - 1;
    if (text.size() > limit) {
        seq.truncated = true;
        for (std::size_t i = 0; i < limit; ++i) {
            seq.ids[i] = static_cast<unsigned char>(text[i]) + kByteOffset;
            seq.mask[i] = 1;
        }
        return seq;
    }
    for (std::size_t i = 0; i < text.size(); ++i) {
        seq.ids[i] = static_cast<unsigned char>(text[i]) + kByteOffset;
        seq.mask[i] = 1;
    }
    seq.ids[text.size()] = kEosId;
    seq.mask[text.size()] = 1;
    return seq;
}

std::string detokenize(const ByteTokenSeq& seq) {
    static const std::string kReplacement = encode_utf8(char32_t{0xFFFD});
    std::string out;
    std::string run;
    auto flush = [&] {
        for (char32_t cp : decode_utf8(run)) out += encode_utf8(cp);
        run.clear();
    };
    for (int id : seq.ids) {
        if (id == kEosId) break;
        if (id == kPadId) continue;
        if (id == kUnkId || id < 0 || id >= kVocabSize) {
            flush();
            out += kReplacement;
            continue;
        }
        run += static_cast<char>(id - kByteOffset);
    }
    flush();
    return out;
}

void TextEncoderConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) throw ConfigError("text d_model must divide by heads");
    if (n_layers != 2) throw ConfigError("text encoder uses exactly two layers");
    if (max_len < 2) throw ConfigError("text max_len must be at least 2");
    if (d_ff <= 0 || projection_dim < 0) throw ConfigError("invalid text encoder widths");
}

TextEncoder::TextEncoder(nn::ParamStore& store, const TextEncoderConfig& config, const std::string& prefix)
    : config_(config) {
    config_.validate();
    const int d = config_.d_model;
    embed_ = store.create(prefix + ".embed", {kVocabSize, d}, nn::Init::Normal, 1.0);
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = prefix + ".layer" + std::to_string(l);
        blocks_.push_back(Block{nn::LayerNorm(store, p + ".norm_attn", d), nn::LayerNorm(store, p + ".norm_ff", d),
                                nn::MultiHeadAttention(store, p + ".attn", d, d, config_.n_heads),
                                nn::Linear(store, p + ".ff_in", d, config_.d_ff),
                                nn::Linear(store, p + ".ff_out", config_.d_ff, d)});
    }
    final_norm_ = nn::LayerNorm(store, prefix + ".final_norm", d);
    if (config_.projection_dim > 0) projection_ = nn::Linear(store, prefix + ".proj", d, config_.projection_dim);

    std::vector<double> pos(config_.max_len);
    for (int i = 0; i < config_.max_len; ++i) pos[i] = i;
    positions_ = nn::sinusoidal_embedding(pos, d);
    if (!config_.trainable) store.set_trainable(prefix + ".", false);
}

TextFeatures TextEncoder::encode(const std::vector<ByteTokenSeq>& batch) const {
    const int m = config_.max_len;
    const int b = static_cast<int>(batch.size());
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    ids.reserve(static_cast<std::size_t>(b) * m);
    for (const auto& seq : batch) {
        if (seq.length() != m) {
            throw ShapeMismatch("token sequence length " + std::to_string(seq.length()) + " != " + std::to_string(m));
        }
        ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
        mask.insert(mask.end(), seq.mask.begin(), seq.mask.end());
    }
    // PAD positions are inert: their ids are ignored entirely.
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!mask[i]) ids[i] = kPadId;
    }
    std::vector<double> row_mask(mask.begin(), mask.end());

    nn::Tensor x = nn::embedding(embed_, ids, {b, m});
    x = nn::add_constant(x, positions_);
    for (const Block& blk : blocks_) {
        const nn::Tensor h = blk.norm_attn(x);
        x = nn::add(x, blk.attn(h, h, mask));
        x = nn::add(x, blk.ff_out(nn::gelu(blk.ff_in(blk.norm_ff(x)))));
    }
    x = final_norm_(x);
    if (config_.projection_dim > 0) x = projection_(x);
    x = nn::scale_rows(x, row_mask);
    return TextFeatures{x, std::move(mask)};
}

}  // namespace glyphsr
