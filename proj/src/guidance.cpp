#include "glyphsr/guidance.hpp"

#include <cmath>

#include "glyphsr/diffusion.hpp"
#include "glyphsr/errors.hpp"
#include "glyphsr/rng.hpp"

namespace glyphsr {

void GuidanceConfig::validate() const {
    if (ddim_steps < 1) throw InvalidRange("ddim_steps must be >= 1");
    if (R < 0) throw InvalidRange("R must be >= 0");
    if (!std::isfinite(omega)) throw InvalidRange("omega must be finite");
}

ImagePlane cfg_combine(const ImagePlane& eps_uncond, const ImagePlane& eps_cond, double omega) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    ImagePlane out = eps_uncond;
    const double keep = 1.0 - omega;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = keep * eps_uncond.data[i] + omega * eps_cond.data[i];
    return out;
}

ImagePlane restore(const ImagePlane& c_I, const MaybeText& text, const GuidanceConfig& cfg,
                   const RestorationModel& model) {
    cfg.validate();
    const bool has_text = text.has_value() && !text->empty();
    const ImagePlane* image_cond = cfg.null_image ? nullptr : &c_I;
    const ImagePlane base = cfg.null_image ? ImagePlane(c_I.height, c_I.width, c_I.channels, 0.0) : c_I;

    std::optional<TextFeatures> feats;
    if (has_text && cfg.omega != 0.0) feats = model.encode_text({*text});

    NoisePredictor predict = [&](const ImagePlane& x_t, int t) {
        if (!feats) return model.predict_noise(x_t, t, image_cond, nullptr);
        // The single-branch shortcut at omega = 1 is exact: cfg_combine returns eps_cond bit for bit.
        if (cfg.omega == 1.0) return model.predict_noise(x_t, t, image_cond, &*feats);
        const ImagePlane uncond = model.predict_noise(x_t, t, image_cond, nullptr);
        const ImagePlane cond = model.predict_noise(x_t, t, image_cond, &*feats);
        return cfg_combine(uncond, cond, cfg.omega);
    };
    return ddim_sample(base, predict, model.schedule(), cfg.ddim_steps, cfg.seed);
}

RestoreFn model_restorer(const RestorationModel& model) {
    return [&model](const ImagePlane& c_I, const MaybeText& text, const GuidanceConfig& cfg) {
        return restore(c_I, text, cfg, model);
    };
}

std::uint64_t restore_seed(std::uint64_t seed, int slot) {
    return hash_keys({seed, static_cast<std::uint64_t>(slot)});
}

IterativeResult iterative_restore(const ImagePlane& c_I, const GuidanceConfig& cfg, const RecognizeFn& ocr,
                                  const RestoreFn& restorer) {
    cfg.validate();
    IterativeResult r;
    auto run = [&](const MaybeText& text, int slot) {
        GuidanceConfig call = cfg;
        call.seed = restore_seed(cfg.seed, slot);
        ++r.restore_calls;
        MaybeText t = text && text->empty() ? std::nullopt : text;
        return restorer(c_I, t, call);
    };
    auto read = [&](const ImagePlane& img) {
        ++r.ocr_calls;
        std::string s = ocr(img);
        r.transcripts.push_back(s);
        return s;
    };

    if (cfg.R == 0) {
        const std::string text = read(c_I);
        r.image = run(text, 1);
        return r;
    }
    r.image = run(std::nullopt, 0);
    for (int i = 0; i < cfg.R; ++i) {
        const std::string text = read(r.image);
        r.image = run(text, 1);
    }
    return r;
}

}  // namespace glyphsr
