#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "glyphsr/diffusion.hpp"
#include "glyphsr/guidance.hpp"
#include "glyphsr/synth.hpp"

namespace glyphsr {

using Json = nlohmann::json;

constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
    int batch_size = 4;
    double lr = 3e-4;
    double clip_norm = 1.0;
    ConditionDropout dropout;
    int log_every = 50;
    int checkpoint_every = 500;
    // Window of the moving average reported as the smoothed loss.
    int smooth_window = 100;
    std::uint64_t seed = 0;
};

struct DataConfig {
    std::string charset = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ一二三十口日中田王工";
    int count = 5000;
    int dup = 20;
    int min_len = 1;
    int max_len = 10;
    int source_height_lo = 12;
    int source_height_hi = 96;
    DegradationConfig degrade;
    std::uint64_t seed = 0;
};

// One document for a whole experiment.
struct RunConfig {
    int schema_version = kConfigSchemaVersion;
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    GuidanceConfig guidance;

    void validate() const;
};

Json to_json(const ModelConfig& c);
Json to_json(const DegradationConfig& c);
Json to_json(const RunConfig& c);

// Unknown keys raise ConfigError; missing keys keep their defaults.
ModelConfig model_config_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Json& j);
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace glyphsr
