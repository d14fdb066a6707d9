#include "glyphsr/unet.hpp"

#include <algorithm>
#include <cmath>

#include "glyphsr/errors.hpp"

namespace glyphsr {

using nn::Tensor;

DenoiserConfig DenoiserConfig::paper_scale() {
    DenoiserConfig c;
    c.image_channels = 3;
    c.base_channels = 32;
    c.channel_multipliers = {1, 2, 4, 8, 8};
    c.down_factors = {2, 2, 2, 2, 3};
    c.cross_attn_levels = {4, 5};
    c.time_embed_dim = 128;
    c.attn_heads = 8;
    c.norm_groups = 8;
    c.context_dim = 1536;
    c.height = 48;
    c.width = 480;
    return c;
}

DenoiserConfig DenoiserConfig::tiny() {
    DenoiserConfig c;
    c.image_channels = 1;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.down_factors = {2, 2};
    c.down_blocks = 1;
    c.up_blocks = 2;
    c.cross_attn_levels = {1, 2};
    c.time_embed_dim = 8;
    c.attn_heads = 2;
    c.norm_groups = 2;
    c.context_dim = 8;
    c.height = 8;
    c.width = 16;
    return c;
}

int DenoiserConfig::total_downsample() const {
    int f = 1;
    for (int d : down_factors) f *= d;
    return f;
}

bool DenoiserConfig::has_cross_attn(int level) const {
    return std::find(cross_attn_levels.begin(), cross_attn_levels.end(), level) != cross_attn_levels.end();
}

void DenoiserConfig::validate() const {
    if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
    if (channel_multipliers.empty() || down_factors.size() != channel_multipliers.size()) {
        throw ConfigError("need one down factor per channel multiplier");
    }
    for (int f : down_factors) {
        if (f < 1) throw ConfigError("down factors must be positive");
    }
    for (int l : cross_attn_levels) {
        if (l < 0 || l > levels()) throw ConfigError("cross-attention level out of range");
    }
    if (down_blocks < 1 || up_blocks != down_blocks + 1) throw ConfigError("up_blocks must equal down_blocks + 1");
    for (int m : channel_multipliers) {
        const int ch = base_channels * m;
        if (m <= 0 || ch % norm_groups != 0) throw ConfigError("channels must divide into norm groups");
        if (ch % attn_heads != 0) throw ConfigError("channels must divide into attention heads");
    }
    if (base_channels % 2 != 0 || time_embed_dim <= 0 || context_dim <= 0) throw ConfigError("invalid widths");
    if (height <= 0 || width <= 0) throw ConfigError("invalid line size");
}

std::vector<double> grid_position_code(int height, int width, int channels) {
    const int half = channels / 2;
    std::vector<double> cols(width), rows(height);
    for (int x = 0; x < width; ++x) cols[x] = x;
    for (int y = 0; y < height; ++y) rows[y] = y;
    const auto col_code = nn::sinusoidal_embedding(cols, half);
    const auto row_code = nn::sinusoidal_embedding(rows, channels - half);
    std::vector<double> out(static_cast<std::size_t>(height) * width * channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double* dst = out.data() + (static_cast<std::size_t>(y) * width + x) * channels;
            std::copy_n(col_code.data() + static_cast<std::size_t>(x) * half, half, dst);
            std::copy_n(row_code.data() + static_cast<std::size_t>(y) * (channels - half), channels - half, dst + half);
        }
    }
    return out;
}

Tensor Denoiser::ResBlock::operator()(const Tensor& x, const Tensor& temb_act) const {
    Tensor h = conv1(nn::silu(norm1(x)));
    h = nn::add_channel_bias(h, time_proj(temb_act));
    h = conv2(nn::silu(norm2(h)));
    return nn::add(has_skip ? skip(x) : x, h);
}

Tensor Denoiser::CrossAttnBlock::operator()(const Tensor& x, const TextFeatures& text,
                                            const std::vector<double>& keep) const {
    const int h = x.dim(2), w = x.dim(3), c = x.dim(1);
    Tensor tokens = nn::to_tokens(x);
    Tensor q_in = nn::add_constant(norm(tokens), grid_position_code(h, w, c));
    Tensor a = attn(q_in, text.values, text.mask);
    if (!keep.empty()) a = nn::scale_rows(a, keep);
    return nn::add(x, nn::from_tokens(a, h, w));
}

namespace {

int norm_groups_for(int channels, int groups) {
    int g = std::min(groups, channels);
    while (channels % g != 0) --g;
    return g;
}

Denoiser::ResBlock make_res(nn::ParamStore& s, const std::string& name, int in, int out, int tdim, int groups) {
    Denoiser::ResBlock r;
    r.norm1 = nn::GroupNorm(s, name + ".norm1", in, norm_groups_for(in, groups));
    r.conv1 = nn::Conv2d(s, name + ".conv1", in, out, 3);
    r.time_proj = nn::Linear(s, name + ".time", tdim, out);
    r.norm2 = nn::GroupNorm(s, name + ".norm2", out, norm_groups_for(out, groups));
    r.conv2 = nn::Conv2d(s, name + ".conv2", out, out, 3);
    r.has_skip = in != out;
    if (r.has_skip) r.skip = nn::Conv2d(s, name + ".skip", in, out, 1);
    return r;
}

Denoiser::CrossAttnBlock make_attn(nn::ParamStore& s, const std::string& name, int ch, int ctx, int heads) {
    return {nn::LayerNorm(s, name + ".norm", ch), nn::MultiHeadAttention(s, name + ".attn", ch, ctx, heads)};
}

}  // namespace

Denoiser::Denoiser(nn::ParamStore& store, const DenoiserConfig& config, const std::string& prefix) : config_(config) {
    config_.validate();
    const int base = config_.base_channels, tdim = config_.time_embed_dim, g = config_.norm_groups;
    const int ctx = config_.context_dim, heads = config_.attn_heads;
    const int L = config_.levels();

    time_in = nn::Linear(store, prefix + ".time_in", base, tdim);
    time_out = nn::Linear(store, prefix + ".time_out", tdim, tdim);
    image_null_embed_ = store.create(prefix + ".image_null", {tdim}, nn::Init::Normal, 0.02);
    conv_in_ = nn::Conv2d(store, prefix + ".conv_in", config_.in_channels(), base, 3);

    std::vector<int> skip_channels{base};
    int ch = base;
    levels_.resize(L);
    for (int l = 0; l < L; ++l) {
        const int out = base * config_.channel_multipliers[l];
        const std::string p = prefix + ".down" + std::to_string(l);
        for (int b = 0; b < config_.down_blocks; ++b) {
            levels_[l].down.push_back(make_res(store, p + ".res" + std::to_string(b), ch, out, tdim, g));
            ch = out;
            if (config_.has_cross_attn(l)) {
                levels_[l].down_attn.push_back(make_attn(store, p + ".xattn" + std::to_string(b), ch, ctx, heads));
            }
            skip_channels.push_back(ch);
        }
        if (l + 1 < L) skip_channels.push_back(ch);
    }
    mid1_ = make_res(store, prefix + ".mid.res0", ch, ch, tdim, g);
    if (config_.has_cross_attn(L)) mid_attn_.push_back(make_attn(store, prefix + ".mid.xattn", ch, ctx, heads));
    mid2_ = make_res(store, prefix + ".mid.res1", ch, ch, tdim, g);

    for (int l = L - 1; l >= 0; --l) {
        const int out = base * config_.channel_multipliers[l];
        const std::string p = prefix + ".up" + std::to_string(l);
        levels_[l].upsample_conv = nn::Conv2d(store, p + ".upsample", ch, ch, 3);
        for (int b = 0; b < config_.up_blocks; ++b) {
            const int skip_ch = skip_channels.back();
            skip_channels.pop_back();
            levels_[l].up.push_back(make_res(store, p + ".res" + std::to_string(b), ch + skip_ch, out, tdim, g));
            ch = out;
            if (config_.has_cross_attn(l)) {
                levels_[l].up_attn.push_back(make_attn(store, p + ".xattn" + std::to_string(b), ch, ctx, heads));
            }
        }
    }
    norm_out_ = nn::GroupNorm(store, prefix + ".norm_out", ch, g);
    conv_out_ = nn::Conv2d(store, prefix + ".conv_out", ch, config_.image_channels, 3, /*zero_init=*/true);
}

Tensor Denoiser::forward(const DenoiserInputs& in) const {
    const int batch = in.x_t.dim(0);
    const int h = in.x_t.dim(2), w = in.x_t.dim(3);
    if (in.x_t.dim(1) != config_.image_channels || in.image_cond.shape() != in.x_t.shape()) {
        throw ShapeMismatch("denoiser expects x_t and c_I of equal shape with the configured channel count");
    }
    if (static_cast<int>(in.timesteps.size()) != batch) throw ShapeMismatch("one timestep per sample");

    // Lines whose size does not divide the pooling chain are zero-padded and cropped back.
    const int f = config_.total_downsample();
    const int ph = (h + f - 1) / f * f, pw = (w + f - 1) / f * f;

    std::vector<double> tpos(in.timesteps.begin(), in.timesteps.end());
    Tensor temb = Tensor::from_data({batch, config_.base_channels},
                                    nn::sinusoidal_embedding(tpos, config_.base_channels));
    temb = time_out(nn::silu(time_in(temb)));
    if (!in.image_null.empty()) {
        std::vector<double> coeff(in.image_null.begin(), in.image_null.end());
        if (std::any_of(coeff.begin(), coeff.end(), [](double c) { return c != 0.0; })) {
            temb = nn::add_scaled_vector(temb, image_null_embed_, coeff);
        }
    }
    const Tensor temb_act = nn::silu(temb);

    const TextFeatures* text = in.text;
    std::vector<double> keep;
    if (text) {
        if (text->batch() != batch) throw ShapeMismatch("text batch does not match image batch");
        if (text->values.dim(2) != config_.context_dim) throw ShapeMismatch("text feature width != context_dim");
        if (!in.text_null.empty()) {
            keep.resize(batch);
            bool any = false, all = true;
            for (int b = 0; b < batch; ++b) {
                keep[b] = in.text_null[b] ? 0.0 : 1.0;
                any = any || keep[b] != 0.0;
                all = all && keep[b] != 0.0;
            }
            if (!any) text = nullptr;
            if (all) keep.clear();
        }
    }
    // Cross-attention output is per query token; expand per-sample keep factors to rows.
    auto run_attn = [&](const CrossAttnBlock& blk, const Tensor& x) {
        if (!text) return x;
        std::vector<double> rows;
        if (!keep.empty()) {
            const int tokens = x.dim(2) * x.dim(3);
            rows.reserve(static_cast<std::size_t>(batch) * tokens);
            for (int b = 0; b < batch; ++b) rows.insert(rows.end(), tokens, keep[b]);
        }
        return blk(x, *text, rows);
    };

    Tensor x = nn::concat_channels(nn::pad_to(in.x_t, ph, pw), nn::pad_to(in.image_cond, ph, pw));
    Tensor hcur = conv_in_(x);
    std::vector<Tensor> skips{hcur};
    const int L = config_.levels();
    for (int l = 0; l < L; ++l) {
        const Level& lv = levels_[l];
        for (std::size_t b = 0; b < lv.down.size(); ++b) {
            hcur = lv.down[b](hcur, temb_act);
            if (!lv.down_attn.empty()) hcur = run_attn(lv.down_attn[b], hcur);
            skips.push_back(hcur);
        }
        hcur = nn::avg_pool2d(hcur, config_.down_factors[l]);
        if (l + 1 < L) skips.push_back(hcur);
    }
    hcur = mid1_(hcur, temb_act);
    if (!mid_attn_.empty()) hcur = run_attn(mid_attn_[0], hcur);
    hcur = mid2_(hcur, temb_act);

    for (int l = L - 1; l >= 0; --l) {
        const Level& lv = levels_[l];
        hcur = lv.upsample_conv(nn::upsample_nearest(hcur, config_.down_factors[l]));
        for (std::size_t b = 0; b < lv.up.size(); ++b) {
            hcur = nn::concat_channels(hcur, skips.back());
            skips.pop_back();
            hcur = lv.up[b](hcur, temb_act);
            if (!lv.up_attn.empty()) hcur = run_attn(lv.up_attn[b], hcur);
        }
    }
    Tensor out = conv_out_(nn::silu(norm_out_(hcur)));
    return nn::pad_to(out, h, w);
}

}  // namespace glyphsr
