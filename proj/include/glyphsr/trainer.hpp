#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "glyphsr/config.hpp"
#include "glyphsr/diffusion.hpp"
#include "glyphsr/nn/adam.hpp"
#include "glyphsr/synth.hpp"

namespace glyphsr {

// Manifest records with PNGs read on demand.
class TrainingSet {
public:
    TrainingSet(std::filesystem::path manifest, int line_height, int line_width);

    std::size_t size() const { return records_.size(); }
    const ManifestRecord& record(std::size_t i) const { return records_[i]; }
    const std::vector<ManifestRecord>& records() const { return records_; }
    const std::filesystem::path& root() const { return root_; }

    // Both planes fitted to the line shape.
    ImagePlane hr(std::size_t i) const;
    ImagePlane lr(std::size_t i) const;

private:
    std::filesystem::path root_;
    std::vector<ManifestRecord> records_;
    int height_, width_;
};

// Reads a PNG and brings it to the model's line shape: height must match, width is padded
// with background or trimmed.
ImagePlane load_line(const std::filesystem::path& path, int height, int width);

struct LossEntry {
    long long step = 0;
    double loss = 0.0;
    double smoothed = 0.0;
    double grad_norm = 0.0;
    double ms = 0.0;
};

std::string loss_entry_json(const LossEntry& e);
// Entries with step <= up_to (all when negative), in file order.
std::vector<LossEntry> read_loss_log(const std::filesystem::path& path, long long up_to = -1);

// Trailing mean over at most `window` entries ending at index i.
double trailing_mean(const std::vector<double>& losses, std::size_t i, int window);

struct TrainOptions {
    long long start_step = 0;  // steps already taken (resume point)
    long long end_step = 0;
    std::filesystem::path checkpoint;  // written every checkpoint_every steps and at the end
    std::filesystem::path loss_log;    // JSONL, one line per step
    std::function<void(const LossEntry&)> on_log;  // every log_every steps
};

struct TrainResult {
    long long final_step = 0;
    std::vector<LossEntry> log;  // includes entries carried over from a resumed log
    int retries = 0;
};

// Batches are drawn by a generator keyed on (seed, step), so a resumed run sees the same
// batches an uninterrupted one would. A non-finite loss reloads the last checkpoint and
// retries once with re-drawn batches; a second failure propagates NonFiniteLoss.
TrainResult train(const RunConfig& config, const TrainingSet& data, RestorationModel& model, nn::Adam& optimizer,
                  const TrainOptions& options);

}  // namespace glyphsr
