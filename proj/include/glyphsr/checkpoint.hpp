#pragma once

#include <filesystem>
#include <memory>

#include "glyphsr/config.hpp"
#include "glyphsr/diffusion.hpp"
#include "glyphsr/nn/adam.hpp"

namespace glyphsr {

constexpr int kCheckpointSchemaVersion = 1;

// File layout: "TSR1", u64 header length, JSON header, u32 tensor count, then per tensor
// {u32 name length, name bytes, u8 dtype (1 = f64), u32 rank, u64 dims..., payload}.
// Everything little-endian. Optimizer moments ride along as "adam.m.<name>" / "adam.v.<name>".
// The file is written beside the target and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const RestorationModel& model, long long step,
                     const nn::Adam* optimizer = nullptr, const Json& extra = Json::object());

struct CheckpointHeader {
    ModelConfig config;
    long long step = 0;
    long long optimizer_steps = 0;
    Json raw;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Copies weights (and moments, when an optimizer is given and the file has them) into the
// model. Config differences or missing/misshapen tensors raise CheckpointMismatch.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, RestorationModel& model,
                                 nn::Adam* optimizer = nullptr);

// Builds a model from the checkpoint's own config, then loads it.
std::unique_ptr<RestorationModel> load_model(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

}  // namespace glyphsr
