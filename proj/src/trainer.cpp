#include "glyphsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "glyphsr/checkpoint.hpp"
#include "glyphsr/errors.hpp"
#include "glyphsr/png_io.hpp"
#include "glyphsr/rng.hpp"

namespace glyphsr {

ImagePlane load_line(const std::filesystem::path& path, int height, int width) {
    ImagePlane img = read_png(path);
    if (img.height != height)
        throw ShapeMismatch(path.string() + ": line height " + std::to_string(img.height) + ", model expects " +
                            std::to_string(height));
    return img.width == width ? img : fit_width(img, width);
}

TrainingSet::TrainingSet(std::filesystem::path manifest, int line_height, int line_width)
    : root_(manifest.parent_path()), records_(read_manifest(manifest)), height_(line_height), width_(line_width) {}

ImagePlane TrainingSet::hr(std::size_t i) const { return load_line(root_ / records_.at(i).hr_path, height_, width_); }
ImagePlane TrainingSet::lr(std::size_t i) const { return load_line(root_ / records_.at(i).lr_path, height_, width_); }

std::string loss_entry_json(const LossEntry& e) {
    return Json{{"step", e.step}, {"loss", e.loss}, {"smoothed", e.smoothed}, {"grad_norm", e.grad_norm}, {"ms", e.ms}}
        .dump();
}

std::vector<LossEntry> read_loss_log(const std::filesystem::path& path, long long up_to) {
    std::vector<LossEntry> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const Json j = Json::parse(line);
            LossEntry e{j.at("step").get<long long>(), j.at("loss").get<double>(), j.value("smoothed", 0.0),
                        j.value("grad_norm", 0.0), j.value("ms", 0.0)};
            if (up_to >= 0 && e.step > up_to) break;
            out.push_back(e);
        } catch (const Json::exception&) {
            break;  // a torn last line from an interrupted run
        }
    }
    return out;
}

double trailing_mean(const std::vector<double>& losses, std::size_t i, int window) {
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), i + 1);
    double s = 0.0;
    for (std::size_t k = i + 1 - w; k <= i; ++k) s += losses[k];
    return s / static_cast<double>(w);
}

TrainResult train(const RunConfig& config, const TrainingSet& data, RestorationModel& model, nn::Adam& optimizer,
                  const TrainOptions& options) {
    if (data.size() == 0 && options.end_step > options.start_step) throw EmptyEvalSet("training manifest is empty");
    const auto& tc = config.train;
    const Json extra{{"run_config", to_json(config)}, {"config_hash", config_hash(to_json(config))}};

    TrainResult result;
    result.log = read_loss_log(options.loss_log, options.start_step);
    std::vector<double> losses;
    std::ofstream log;
    // Rewrites the log so it ends exactly at `at`, then reopens it for appending.
    auto rewind_log = [&](long long at) {
        while (!result.log.empty() && result.log.back().step > at) result.log.pop_back();
        losses.clear();
        for (const auto& e : result.log) losses.push_back(e.loss);
        if (log.is_open()) log.close();
        {
            std::ofstream out(options.loss_log, std::ios::trunc);
            if (!out) throw IOFailure("cannot write loss log " + options.loss_log.string());
            for (const auto& e : result.log) out << loss_entry_json(e) << '\n';
        }
        log.open(options.loss_log, std::ios::app);
    };
    rewind_log(options.start_step);

    long long step = options.start_step;
    long long checkpoint_step = options.start_step;
    std::uint64_t salt = 0;
    if (!options.checkpoint.empty()) save_checkpoint(options.checkpoint, model, step, &optimizer, extra);

    while (step < options.end_step) {
        const auto t0 = std::chrono::steady_clock::now();
        KeyedRng pick({tc.seed, static_cast<std::uint64_t>(step), 0x5eed, salt});
        std::vector<ImagePlane> hr(static_cast<std::size_t>(tc.batch_size)), lr(hr.size());
        std::vector<std::string> text(hr.size());
        for (std::size_t b = 0; b < hr.size(); ++b) {
            const auto i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(data.size()) - 1));
            hr[b] = data.hr(i);
            lr[b] = data.lr(i);
            text[b] = data.record(i).text;
        }
        std::vector<TrainingSample> samples;
        for (std::size_t b = 0; b < hr.size(); ++b) samples.push_back({&hr[b], &lr[b], &text[b]});
        const DiffusionBatch batch = make_batch(samples, model.schedule(), tc.dropout, model.config().text.max_len,
                                                hash_keys({tc.seed, salt}), static_cast<std::uint64_t>(step));

        StepResult sr;
        try {
            model.params().zero_grad();
            sr = training_step(batch, model);
        } catch (const NonFiniteLoss&) {
            if (result.retries > 0 || options.checkpoint.empty()) throw;
            ++result.retries;
            ++salt;
            load_checkpoint(options.checkpoint, model, &optimizer);
            step = checkpoint_step;
            rewind_log(step);
            continue;
        }
        const double grad_norm = optimizer.step();
        ++step;

        losses.push_back(sr.loss);
        LossEntry e;
        e.step = step;
        e.loss = sr.loss;
        e.smoothed = trailing_mean(losses, losses.size() - 1, tc.smooth_window);
        e.grad_norm = grad_norm;
        e.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        log << loss_entry_json(e) << '\n';
        log.flush();
        result.log.push_back(e);
        if (options.on_log && (step % tc.log_every == 0 || step == options.end_step)) options.on_log(e);

        if (!options.checkpoint.empty() && (step % tc.checkpoint_every == 0 || step == options.end_step)) {
            save_checkpoint(options.checkpoint, model, step, &optimizer, extra);
            checkpoint_step = step;
        }
    }
    result.final_step = step;
    return result;
}

}  // namespace glyphsr
