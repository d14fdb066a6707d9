#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glyphsr/image.hpp"

namespace glyphsr {

class RestorationModel;

struct GuidanceConfig {
    double omega = 1.0;
    int R = 0;
    int ddim_steps = 5;
    bool null_image = false;  // text-only generation
    std::uint64_t seed = 0;

    void validate() const;
};

// (1 - omega) * eps_uncond + omega * eps_cond
ImagePlane cfg_combine(const ImagePlane& eps_uncond, const ImagePlane& eps_cond, double omega);

// Null text is std::nullopt. An empty transcript is treated the same way.
using MaybeText = std::optional<std::string>;

// One guided DDIM restoration of a model-shaped crop. cfg.seed is used as-is.
ImagePlane restore(const ImagePlane& c_I, const MaybeText& text, const GuidanceConfig& cfg,
                   const RestorationModel& model);

using RestoreFn = std::function<ImagePlane(const ImagePlane& c_I, const MaybeText& text, const GuidanceConfig& cfg)>;
using RecognizeFn = std::function<std::string(const ImagePlane& image)>;

RestoreFn model_restorer(const RestorationModel& model);

// Noise seed of a restore call. The unconditioned warm-up pass uses slot 0 and every
// text-conditioned pass uses slot 1, so a constant transcript is a fixed point.
std::uint64_t restore_seed(std::uint64_t seed, int slot);

struct IterativeResult {
    ImagePlane image;
    std::vector<std::string> transcripts;
    int restore_calls = 0;
    int ocr_calls = 0;
};

// R = 0: restore(c_I, ocr(c_I)).
// R >= 1: x = restore(c_I, null), then R times { text = ocr(x); x = restore(c_I, text) }.
IterativeResult iterative_restore(const ImagePlane& c_I, const GuidanceConfig& cfg, const RecognizeFn& ocr,
                                  const RestoreFn& restorer);

}  // namespace glyphsr
