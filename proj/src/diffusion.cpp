#include "glyphsr/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "glyphsr/errors.hpp"
#include "glyphsr/rng.hpp"

namespace glyphsr {

NoiseSchedule make_schedule(int steps, double beta_lo, double beta_hi) {
    if (steps < 1) throw InvalidRange("schedule needs at least one step");
    if (!(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0)) {
        throw InvalidRange("need 0 < beta_lo <= beta_hi < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.beta[i] = steps == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * i / (steps - 1);
        prod *= 1.0 - s.beta[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

ImagePlane q_sample(const ImagePlane& x0, double alpha_bar, const ImagePlane& eps) {
    require_same_shape(x0, eps, "q_sample");
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    ImagePlane out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

ImagePlane q_sample(const ImagePlane& x0, int t, const ImagePlane& eps, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.steps) throw InvalidRange("timestep out of range");
    return q_sample(x0, schedule.alpha_bar[t], eps);
}

std::vector<int> ddim_timesteps(int total_steps, int steps) {
    if (steps < 1 || steps > total_steps) throw InvalidRange("DDIM step count must lie in [1, T]");
    std::vector<int> ts(steps);
    if (steps == 1) {
        ts[0] = total_steps - 1;
        return ts;
    }
    for (int i = 0; i < steps; ++i) {
        ts[i] = static_cast<int>(std::lround(static_cast<double>(total_steps - 1) * (steps - 1 - i) / (steps - 1)));
    }
    return ts;
}

ImagePlane ddim_sample_residual(int height, int width, int channels, const NoisePredictor& predict,
                                const NoiseSchedule& schedule, int steps, std::uint64_t seed) {
    const auto ts = ddim_timesteps(schedule.steps, steps);
    ImagePlane x(height, width, channels);
    KeyedRng rng{seed, 0xdd1aULL};
    for (double& v : x.data) v = rng.normal();

    ImagePlane x0(height, width, channels);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double ab = schedule.alpha_bar[ts[i]];
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const ImagePlane eps = predict(x, ts[i]);
        require_same_shape(eps, x, "noise prediction");
        for (std::size_t j = 0; j < x.size(); ++j) x0.data[j] = std::clamp((x.data[j] - sb * eps.data[j]) / sa, -1.0, 1.0);
        if (i + 1 == ts.size()) break;
        const double ab_prev = schedule.alpha_bar[ts[i + 1]];
        const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double eps_j = (x.data[j] - sa * x0.data[j]) / sb;
            x.data[j] = pa * x0.data[j] + pb * eps_j;
        }
    }
    return x0;
}

ImagePlane ddim_sample(const ImagePlane& base, const NoisePredictor& predict, const NoiseSchedule& schedule, int steps,
                       std::uint64_t seed) {
    const ImagePlane residual =
        ddim_sample_residual(base.height, base.width, base.channels, predict, schedule, steps, seed);
    ImagePlane out = base;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::clamp(base.data[i] + 2.0 * residual.data[i], -1.0, 1.0);
    return out;
}

void ModelConfig::validate() const {
    denoiser.validate();
    text.validate();
    if (denoiser.context_dim != text.output_dim()) {
        throw ConfigError("denoiser context_dim must equal the text feature width");
    }
    make_schedule(schedule.steps, schedule.beta_lo, schedule.beta_hi);
}

namespace {
const ModelConfig& validated(const ModelConfig& c) {
    c.validate();
    return c;
}
}  // namespace

RestorationModel::RestorationModel(const ModelConfig& config)
    : config_(validated(config)),
      store_(config.init_seed),
      encoder_(store_, config.text),
      denoiser_(store_, config.denoiser),
      schedule_(make_schedule(config.schedule.steps, config.schedule.beta_lo, config.schedule.beta_hi)) {}

TextFeatures RestorationModel::encode_text(const std::vector<std::string>& texts) const {
    std::vector<ByteTokenSeq> seqs;
    seqs.reserve(texts.size());
    for (const auto& s : texts) seqs.push_back(tokenize(s, config_.text.max_len));
    nn::NoGradGuard no_grad;
    return encoder_.encode(seqs);
}

std::vector<double> planes_to_nchw(const std::vector<ImagePlane>& planes) {
    std::vector<double> out;
    if (planes.empty()) return out;
    const int h = planes[0].height, w = planes[0].width, c = planes[0].channels;
    out.resize(planes.size() * static_cast<std::size_t>(h) * w * c);
    std::size_t o = 0;
    for (const auto& p : planes) {
        require_same_shape(p, planes[0], "batch planes");
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) out[o++] = p.at(y, x, ch);
            }
        }
    }
    return out;
}

nn::Tensor planes_to_tensor(const std::vector<ImagePlane>& planes) {
    if (planes.empty()) throw ShapeMismatch("empty batch");
    const auto& p = planes[0];
    return nn::Tensor::from_data({static_cast<int>(planes.size()), p.channels, p.height, p.width}, planes_to_nchw(planes));
}

ImagePlane tensor_to_plane(const nn::Tensor& t, int index) {
    const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
    ImagePlane out(h, w, c);
    const double* src = t.values().data() + static_cast<std::size_t>(index) * c * h * w;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) out.at(y, x, ch) = src[(static_cast<std::size_t>(ch) * h + y) * w + x];
        }
    }
    return out;
}

ImagePlane RestorationModel::predict_noise(const ImagePlane& x_t, int t, const ImagePlane* image_cond,
                                           const TextFeatures* text) const {
    nn::NoGradGuard no_grad;
    DenoiserInputs in;
    in.x_t = planes_to_tensor({x_t});
    in.timesteps = {t};
    if (image_cond) {
        require_same_shape(*image_cond, x_t, "predict_noise condition");
        in.image_cond = planes_to_tensor({*image_cond});
    } else {
        in.image_cond = nn::Tensor::zeros(in.x_t.shape());
        in.image_null = {1};
    }
    in.text = text;
    const nn::Tensor out = denoiser_.forward(in);
    ImagePlane eps = tensor_to_plane(out);
    if (!eps.all_finite()) throw NonFiniteActivation("denoiser produced a non-finite value");
    return eps;
}

void DiffusionBatch::validate(const NoiseSchedule& schedule) const {
    const std::size_t n = x0.size();
    if (image_cond.size() != n || text.size() != n || drop_text.size() != n || drop_image.size() != n ||
        t.size() != n || eps.size() != n) {
        throw ShapeMismatch("diffusion batch fields disagree in length");
    }
    if (n == 0) throw ShapeMismatch("empty diffusion batch");
    for (std::size_t i = 0; i < n; ++i) {
        require_same_shape(x0[i], x0[0], "batch x0");
        require_same_shape(image_cond[i], x0[0], "batch image_cond");
        require_same_shape(eps[i], x0[0], "batch eps");
        if (t[i] < 0 || t[i] >= schedule.steps) throw InvalidRange("batch timestep out of range");
        for (double v : x0[i].data) {
            if (!(v >= -1.0 && v <= 1.0)) throw InvalidRange("residual target outside [-1, 1]");
        }
    }
}

DiffusionBatch make_batch(const std::vector<TrainingSample>& samples, const NoiseSchedule& schedule,
                          const ConditionDropout& dropout, int max_text_len, std::uint64_t seed, std::uint64_t step) {
    DiffusionBatch batch;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        require_same_shape(*s.hr, *s.lr, "training pair");
        KeyedRng rng{seed, step, i, 0xba7cULL};
        const bool drop_text = rng.bernoulli(dropout.text);
        const bool drop_image = rng.bernoulli(dropout.image);
        ImagePlane cond = drop_image ? ImagePlane(s.lr->height, s.lr->width, s.lr->channels, 0.0) : *s.lr;
        ImagePlane x0 = *s.hr;
        for (std::size_t j = 0; j < x0.size(); ++j) x0.data[j] = std::clamp((s.hr->data[j] - cond.data[j]) / 2.0, -1.0, 1.0);
        ImagePlane eps(x0.height, x0.width, x0.channels);
        for (double& v : eps.data) v = rng.normal();

        batch.x0.push_back(std::move(x0));
        batch.image_cond.push_back(std::move(cond));
        batch.text.push_back(tokenize(*s.text, max_text_len));
        batch.drop_text.push_back(drop_text);
        batch.drop_image.push_back(drop_image);
        batch.t.push_back(rng.uniform_int(0, schedule.steps - 1));
        batch.eps.push_back(std::move(eps));
    }
    return batch;
}

StepResult training_step(const DiffusionBatch& batch, RestorationModel& model) {
    const NoiseSchedule& schedule = model.schedule();
    batch.validate(schedule);

    std::vector<ImagePlane> noisy;
    noisy.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) noisy.push_back(q_sample(batch.x0[i], batch.t[i], batch.eps[i], schedule));

    DenoiserInputs in;
    in.x_t = planes_to_tensor(noisy);
    in.timesteps = batch.t;
    in.image_cond = planes_to_tensor(batch.image_cond);
    in.image_null = batch.drop_image;

    TextFeatures text;
    const bool any_text = std::any_of(batch.drop_text.begin(), batch.drop_text.end(), [](auto d) { return !d; });
    if (any_text) {
        text = model.encoder().encode(batch.text);
        in.text = &text;
        in.text_null = batch.drop_text;
    }
    const nn::Tensor eps_hat = model.denoiser().forward(in);
    const nn::Tensor per_sample = nn::per_sample_mse(eps_hat, planes_to_nchw(batch.eps));
    const nn::Tensor loss = nn::sorted_mean(per_sample);
    if (!std::isfinite(loss.item())) throw NonFiniteLoss("training loss is not finite");
    loss.backward();
    return {loss.item(), per_sample.values()};
}

}  // namespace glyphsr
