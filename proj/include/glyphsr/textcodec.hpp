#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "glyphsr/nn/layers.hpp"

namespace glyphsr {

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kByteOffset = 3;
inline constexpr int kVocabSize = 259;

struct ByteTokenSeq {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;  // 1 for bytes and EOS, 0 for PAD
    bool truncated = false;

    int length() const { return static_cast<int>(ids.size()); }
};

// UTF-8 bytes shifted by 3, then EOS, then PAD up to max_len. Inputs longer than
// max_len - 1 bytes keep their first max_len - 1 bytes, drop the EOS and set truncated.
ByteTokenSeq tokenize(std::string_view text, int max_len);

// Drops PAD/EOS and decodes; UNK and malformed byte runs become U+FFFD.
std::string detokenize(const ByteTokenSeq& seq);

bool is_valid_utf8(std::string_view s);
std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(char32_t cp);
std::string encode_utf8(const std::u32string& cps);

struct TextEncoderConfig {
    int d_model = 128;
    int d_ff = 256;
    int n_heads = 4;
    int n_layers = 2;
    int max_len = 64;
    bool trainable = true;
    int projection_dim = 0;  // optional linear map to the cross-attention width; 0 = off

    static TextEncoderConfig desk() { return {}; }
    // Dimensions of the first two layers of the byte-level encoder used at full scale.
    static TextEncoderConfig paper_scale() { return {1536, 3968, 12, 2, 64, false, 0}; }

    int output_dim() const { return projection_dim > 0 ? projection_dim : d_model; }
    void validate() const;
};

struct TextFeatures {
    nn::Tensor values;                // [B, M, d]
    std::vector<std::uint8_t> mask;   // B * M

    int batch() const { return values.defined() ? values.dim(0) : 0; }
};

// Byte embeddings + sinusoidal positions, then pre-norm transformer blocks
// (self-attention with PAD masking, GELU feed-forward) and a final norm. PAD rows are zero.
class TextEncoder {
public:
    TextEncoder(nn::ParamStore& store, const TextEncoderConfig& config, const std::string& prefix = "text");

    TextFeatures encode(const std::vector<ByteTokenSeq>& batch) const;
    const TextEncoderConfig& config() const { return config_; }

    struct Block {
        nn::LayerNorm norm_attn, norm_ff;
        nn::MultiHeadAttention attn;
        nn::Linear ff_in, ff_out;
    };
    const std::vector<Block>& blocks() const { return blocks_; }
    const nn::Tensor& token_embedding() const { return embed_; }
    const nn::LayerNorm& final_norm() const { return final_norm_; }
    const nn::Linear& projection() const { return projection_; }

private:
    TextEncoderConfig config_;
    nn::Tensor embed_;
    std::vector<Block> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear projection_;
    std::vector<double> positions_;
};

}  // namespace glyphsr
