#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glyphsr/image.hpp"
#include "glyphsr/nn/layers.hpp"
#include "glyphsr/textcodec.hpp"
#include "glyphsr/unet.hpp"

namespace glyphsr {

struct NoiseSchedule {
    int steps = 0;  // T
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

// Linear beta from beta_lo to beta_hi over T steps; alpha_bar is the running product of 1 - beta.
NoiseSchedule make_schedule(int steps, double beta_lo, double beta_hi);

// x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps
ImagePlane q_sample(const ImagePlane& x0, double alpha_bar, const ImagePlane& eps);
ImagePlane q_sample(const ImagePlane& x0, int t, const ImagePlane& eps, const NoiseSchedule& schedule);

// Uniform-stride subsequence from T-1 down to 0, both endpoints included.
std::vector<int> ddim_timesteps(int total_steps, int steps);

using NoisePredictor = std::function<ImagePlane(const ImagePlane& x_t, int t)>;

// Deterministic (eta = 0) DDIM from Gaussian noise keyed by seed. Returns the final
// clean-residual estimate; each step clips the x0 estimate to [-1, 1].
ImagePlane ddim_sample_residual(int height, int width, int channels, const NoisePredictor& predict,
                                const NoiseSchedule& schedule, int steps, std::uint64_t seed);

// clamp(base + 2 * residual, -1, 1), base being c_I (or zeros for text-only generation).
ImagePlane ddim_sample(const ImagePlane& base, const NoisePredictor& predict, const NoiseSchedule& schedule,
                       int steps, std::uint64_t seed);

struct ScheduleConfig {
    int steps = 1000;
    double beta_lo = 1e-4;
    double beta_hi = 0.02;
};

struct ModelConfig {
    DenoiserConfig denoiser = DenoiserConfig::desk();
    TextEncoderConfig text = TextEncoderConfig::desk();
    ScheduleConfig schedule;
    std::uint64_t init_seed = 0;

    void validate() const;
};

// Text encoder + denoiser + schedule sharing one parameter store.
class RestorationModel {
public:
    explicit RestorationModel(const ModelConfig& config);
    RestorationModel(const RestorationModel&) = delete;
    RestorationModel& operator=(const RestorationModel&) = delete;

    const ModelConfig& config() const { return config_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const TextEncoder& encoder() const { return encoder_; }
    const Denoiser& denoiser() const { return denoiser_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    TextFeatures encode_text(const std::vector<std::string>& texts) const;

    // Single-line noise estimate without gradient tracking. image_cond == nullptr selects the
    // null-image encoding; text == nullptr skips the cross-attention blocks.
    ImagePlane predict_noise(const ImagePlane& x_t, int t, const ImagePlane* image_cond,
                             const TextFeatures* text) const;

private:
    ModelConfig config_;
    nn::ParamStore store_;
    TextEncoder encoder_;
    Denoiser denoiser_;
    NoiseSchedule schedule_;
};

struct DiffusionBatch {
    std::vector<ImagePlane> x0;          // residual targets (HR - c_I*) / 2
    std::vector<ImagePlane> image_cond;  // LR planes, upsampled to HR size
    std::vector<ByteTokenSeq> text;
    std::vector<std::uint8_t> drop_text;
    std::vector<std::uint8_t> drop_image;
    std::vector<int> t;
    std::vector<ImagePlane> eps;

    std::size_t size() const { return x0.size(); }
    void validate(const NoiseSchedule& schedule) const;
};

struct ConditionDropout {
    double text = 0.3;
    double image = 0.1;
};

struct TrainingSample {
    const ImagePlane* hr;
    const ImagePlane* lr;
    const std::string* text;
};

// Draws t, eps and the dropout flags. A dropped image condition is the zero plane, so
// the residual target becomes HR / 2 for that sample.
DiffusionBatch make_batch(const std::vector<TrainingSample>& samples, const NoiseSchedule& schedule,
                          const ConditionDropout& dropout, int max_text_len, std::uint64_t seed, std::uint64_t step);

struct StepResult {
    double loss = 0.0;
    std::vector<double> per_sample;
};

// Mean over the batch of the per-element noise MSE; gradients accumulate into the model's
// parameters (callers zero them first).
StepResult training_step(const DiffusionBatch& batch, RestorationModel& model);

nn::Tensor planes_to_tensor(const std::vector<ImagePlane>& planes);
std::vector<double> planes_to_nchw(const std::vector<ImagePlane>& planes);
ImagePlane tensor_to_plane(const nn::Tensor& t, int index = 0);

}  // namespace glyphsr
