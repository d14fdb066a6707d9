#include "glyphsr/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "glyphsr/errors.hpp"
#include "glyphsr/textcodec.hpp"

namespace glyphsr {

namespace {

// Reads known keys and complains about the rest.
class Reader {
public:
    Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* sub(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }

void read_range(Reader& r, const char* key, Range& out) {
    std::vector<double> v{out.lo, out.hi};
    r.get(key, v);
    if (v.size() != 2) throw ConfigError(std::string(key) + ": expected [lo, hi]");
    out = {v[0], v[1]};
}

Json to_json(const DenoiserConfig& c) {
    return Json{{"image_channels", c.image_channels},   {"base_channels", c.base_channels},
                {"channel_multipliers", c.channel_multipliers}, {"down_factors", c.down_factors},
                {"down_blocks", c.down_blocks},         {"up_blocks", c.up_blocks},
                {"cross_attn_levels", c.cross_attn_levels}, {"time_embed_dim", c.time_embed_dim},
                {"attn_heads", c.attn_heads},           {"norm_groups", c.norm_groups},
                {"context_dim", c.context_dim},         {"height", c.height},
                {"width", c.width}};
}

DenoiserConfig denoiser_from_json(const Json& j) {
    DenoiserConfig c;
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "desk") return DenoiserConfig::desk();
        if (name == "paper_scale") return DenoiserConfig::paper_scale();
        if (name == "tiny") return DenoiserConfig::tiny();
        throw ConfigError("unknown denoiser preset '" + name + "'");
    }
    Reader r(j, "model.denoiser");
    r.get("image_channels", c.image_channels);
    r.get("base_channels", c.base_channels);
    r.get("channel_multipliers", c.channel_multipliers);
    r.get("down_factors", c.down_factors);
    r.get("down_blocks", c.down_blocks);
    r.get("up_blocks", c.up_blocks);
    r.get("cross_attn_levels", c.cross_attn_levels);
    r.get("time_embed_dim", c.time_embed_dim);
    r.get("attn_heads", c.attn_heads);
    r.get("norm_groups", c.norm_groups);
    r.get("context_dim", c.context_dim);
    r.get("height", c.height);
    r.get("width", c.width);
    r.finish();
    return c;
}

Json to_json(const TextEncoderConfig& c) {
    return Json{{"d_model", c.d_model}, {"d_ff", c.d_ff},         {"n_heads", c.n_heads},
                {"n_layers", c.n_layers}, {"max_len", c.max_len}, {"trainable", c.trainable},
                {"projection_dim", c.projection_dim}};
}

TextEncoderConfig text_from_json(const Json& j) {
    TextEncoderConfig c;
    Reader r(j, "model.text");
    r.get("d_model", c.d_model);
    r.get("d_ff", c.d_ff);
    r.get("n_heads", c.n_heads);
    r.get("n_layers", c.n_layers);
    r.get("max_len", c.max_len);
    r.get("trainable", c.trainable);
    r.get("projection_dim", c.projection_dim);
    r.finish();
    return c;
}

DegradationConfig degrade_from_json(const Json& j) {
    DegradationConfig c;
    Reader r(j, "data.degrade");
    read_range(r, "blur_sigma", c.blur_sigma);
    read_range(r, "noise_std", c.noise_std);
    read_range(r, "downsample", c.downsample);
    read_range(r, "quantize_levels", c.quantize_levels);
    r.get("second_order", c.second_order);
    r.finish();
    return c;
}

}  // namespace

Json to_json(const ModelConfig& c) {
    return Json{{"denoiser", to_json(c.denoiser)},
                {"text", to_json(c.text)},
                {"schedule", {{"steps", c.schedule.steps}, {"beta_lo", c.schedule.beta_lo}, {"beta_hi", c.schedule.beta_hi}}},
                {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    Reader r(j, "model");
    if (const Json* d = r.sub("denoiser")) c.denoiser = denoiser_from_json(*d);
    if (const Json* t = r.sub("text")) c.text = text_from_json(*t);
    if (const Json* s = r.sub("schedule")) {
        Reader rs(*s, "model.schedule");
        rs.get("steps", c.schedule.steps);
        rs.get("beta_lo", c.schedule.beta_lo);
        rs.get("beta_hi", c.schedule.beta_hi);
        rs.finish();
    }
    r.get("init_seed", c.init_seed);
    r.finish();
    return c;
}

Json to_json(const DegradationConfig& c) {
    return Json{{"blur_sigma", range_json(c.blur_sigma)},
                {"noise_std", range_json(c.noise_std)},
                {"downsample", range_json(c.downsample)},
                {"quantize_levels", range_json(c.quantize_levels)},
                {"second_order", c.second_order}};
}

Json to_json(const RunConfig& c) {
    const auto& d = c.data;
    const auto& t = c.train;
    const auto& g = c.guidance;
    return Json{
        {"schema_version", c.schema_version},
        {"model", to_json(c.model)},
        {"data",
         {{"charset", d.charset},
          {"count", d.count},
          {"dup", d.dup},
          {"min_len", d.min_len},
          {"max_len", d.max_len},
          {"source_height_lo", d.source_height_lo},
          {"source_height_hi", d.source_height_hi},
          {"degrade", to_json(d.degrade)},
          {"seed", d.seed}}},
        {"train",
         {{"batch_size", t.batch_size},
          {"lr", t.lr},
          {"clip_norm", t.clip_norm},
          {"drop_text", t.dropout.text},
          {"drop_image", t.dropout.image},
          {"log_every", t.log_every},
          {"checkpoint_every", t.checkpoint_every},
          {"smooth_window", t.smooth_window},
          {"seed", t.seed}}},
        {"guidance",
         {{"omega", g.omega}, {"R", g.R}, {"ddim_steps", g.ddim_steps}, {"null_image", g.null_image}, {"seed", g.seed}}},
    };
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    Reader r(j, "config");
    r.get("schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion)
        throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
    if (const Json* m = r.sub("model")) c.model = model_config_from_json(*m);
    if (const Json* d = r.sub("data")) {
        Reader rd(*d, "data");
        rd.get("charset", c.data.charset);
        rd.get("count", c.data.count);
        rd.get("dup", c.data.dup);
        rd.get("min_len", c.data.min_len);
        rd.get("max_len", c.data.max_len);
        rd.get("source_height_lo", c.data.source_height_lo);
        rd.get("source_height_hi", c.data.source_height_hi);
        if (const Json* dg = rd.sub("degrade")) c.data.degrade = degrade_from_json(*dg);
        rd.get("seed", c.data.seed);
        rd.finish();
    }
    if (const Json* t = r.sub("train")) {
        Reader rt(*t, "train");
        rt.get("batch_size", c.train.batch_size);
        rt.get("lr", c.train.lr);
        rt.get("clip_norm", c.train.clip_norm);
        rt.get("drop_text", c.train.dropout.text);
        rt.get("drop_image", c.train.dropout.image);
        rt.get("log_every", c.train.log_every);
        rt.get("checkpoint_every", c.train.checkpoint_every);
        rt.get("smooth_window", c.train.smooth_window);
        rt.get("seed", c.train.seed);
        rt.finish();
    }
    if (const Json* g = r.sub("guidance")) {
        Reader rg(*g, "guidance");
        rg.get("omega", c.guidance.omega);
        rg.get("R", c.guidance.R);
        rg.get("ddim_steps", c.guidance.ddim_steps);
        rg.get("null_image", c.guidance.null_image);
        rg.get("seed", c.guidance.seed);
        rg.finish();
    }
    r.finish();
    c.validate();
    return c;
}

void RunConfig::validate() const {
    model.validate();
    data.degrade.validate();
    guidance.validate();
    if (!is_valid_utf8(data.charset)) throw ConfigError("data.charset is not valid UTF-8");
    if (data.count < 0 || data.dup < 1) throw ConfigError("data.count must be >= 0 and data.dup >= 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (train.dropout.text < 0 || train.dropout.text > 1 || train.dropout.image < 0 || train.dropout.image > 1)
        throw ConfigError("dropout rates must lie in [0, 1]");
    if (train.log_every < 1 || train.checkpoint_every < 1 || train.smooth_window < 1)
        throw ConfigError("train intervals must be >= 1");
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot read config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw IOFailure("cannot write config " + path.string());
    out << to_json(config).dump(2) << '\n';
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const Json& j) {
    // nlohmann objects are key-sorted, so dump() is canonical.
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

}  // namespace glyphsr
