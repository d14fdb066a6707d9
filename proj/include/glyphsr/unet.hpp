#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glyphsr/nn/layers.hpp"
#include "glyphsr/textcodec.hpp"

namespace glyphsr {

struct DenoiserConfig {
    int image_channels = 1;
    int base_channels = 16;
    std::vector<int> channel_multipliers{1, 2, 4, 4};
    // Pooling factor after each level; the last one leads into the middle block.
    std::vector<int> down_factors{2, 2, 2, 3};
    int down_blocks = 2;
    int up_blocks = 3;
    // Levels 0..L-1 are the resolution levels, level L is the middle block.
    std::vector<int> cross_attn_levels{3, 4};
    int time_embed_dim = 64;
    int attn_heads = 4;
    int norm_groups = 8;
    int context_dim = 128;
    int height = 48;
    int width = 240;

    static DenoiserConfig desk() { return {}; }
    // 32 base channels, five levels ending at 3x30 and a 1x10 middle block for 48x480 lines.
    static DenoiserConfig paper_scale();
    // Small enough for finite-difference checks.
    static DenoiserConfig tiny();

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int in_channels() const { return 2 * image_channels; }
    int total_downsample() const;
    bool has_cross_attn(int level) const;
    void validate() const;
};

struct DenoiserInputs {
    nn::Tensor x_t;                        // [B, C, H, W]
    std::vector<int> timesteps;            // B
    nn::Tensor image_cond;                 // [B, C, H, W]; zero for image-null samples
    std::vector<std::uint8_t> image_null;  // B, or empty when no sample is image-null
    const TextFeatures* text = nullptr;    // null: no text branch at all
    std::vector<std::uint8_t> text_null;   // B, or empty when every sample has text
};

// U-Net noise predictor eps_theta(x_t, t, c_I, c_T). The image condition is concatenated
// to x_t along channels; text enters through cross-attention at the configured levels.
class Denoiser {
public:
    Denoiser(nn::ParamStore& store, const DenoiserConfig& config, const std::string& prefix = "unet");

    nn::Tensor forward(const DenoiserInputs& in) const;
    const DenoiserConfig& config() const { return config_; }

    struct ResBlock {
        nn::GroupNorm norm1, norm2;
        nn::Conv2d conv1, conv2, skip;
        nn::Linear time_proj;
        bool has_skip = false;
        nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& temb_act) const;
    };
    struct CrossAttnBlock {
        nn::LayerNorm norm;
        nn::MultiHeadAttention attn;
        nn::Tensor operator()(const nn::Tensor& x, const TextFeatures& text, const std::vector<double>& keep) const;
    };

private:
    struct Level {
        std::vector<ResBlock> down;
        std::vector<CrossAttnBlock> down_attn;
        std::vector<ResBlock> up;
        std::vector<CrossAttnBlock> up_attn;
        nn::Conv2d upsample_conv;
    };

    DenoiserConfig config_;
    nn::Linear time_in, time_out;
    nn::Tensor image_null_embed_;
    nn::Conv2d conv_in_, conv_out_;
    nn::GroupNorm norm_out_;
    std::vector<Level> levels_;
    ResBlock mid1_, mid2_;
    std::vector<CrossAttnBlock> mid_attn_;
};

// 2-D sinusoidal position code for a [H*W, C] token grid: half the channels encode
// the column, half the row.
std::vector<double> grid_position_code(int height, int width, int channels);

}  // namespace glyphsr
