#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glyphsr/guidance.hpp"
#include "glyphsr/image.hpp"

namespace glyphsr {

// ASCII letters are lowercased and other ASCII non-alphanumerics dropped; non-ASCII code
// points pass through untouched.
std::string normalize_text(const std::string& s);

// Over code points.
int levenshtein(const std::u32string& a, const std::u32string& b);

using PredGt = std::pair<std::string, std::string>;  // (pred, gt)

double word_accuracy(const std::vector<PredGt>& pairs);
double char_error_rate(const std::vector<PredGt>& pairs);
// Levenshtein(pred, gt) / max(1, len(gt)) on normalized strings.
double pair_cer(const std::string& pred, const std::string& gt);

struct EvalRecord {
    std::string id;
    std::string gt_text;
    std::string pred_text;
    int height_px = 0;
    bool word_correct = false;
    double cer = 0.0;
};

EvalRecord make_record(std::string id, std::string gt, std::string pred, int height_px);

struct HeightBuckets {
    std::vector<EvalRecord> small;   // < 32 px
    std::vector<EvalRecord> medium;  // [32, 64)
    std::vector<EvalRecord> large;   // >= 64
};

HeightBuckets bucket_by_height(const std::vector<EvalRecord>& records);

struct EvalItem {
    std::string id;
    std::string gt_text;
    int height_px = 0;
    ImagePlane lr;
};

// First `limit` records of a manifest (all when limit <= 0), LR planes fitted to the line.
std::vector<EvalItem> load_eval_items(const std::filesystem::path& manifest, int height, int width, int limit = 0);

struct SweepSpec {
    std::vector<double> omegas;
    std::vector<int> rs;
    int ddim_steps = 5;
    std::uint64_t seed = 0;
    int limit = 0;
    // In-loop OCR for one item; the seed is the item's own.
    std::function<RecognizeFn(const EvalItem& item, std::uint64_t item_seed)> loop_ocr;
    // Reads the restored crop for scoring.
    RecognizeFn evaluator;
    std::string config_hash;
};

struct SweepCell {
    double omega = 0.0;
    int R = 0;
    double word_acc = 0.0;
    double cer = 0.0;
    int n = 0;
    double wall_ms = 0.0;
    std::vector<EvalRecord> records;
};

struct SweepTable {
    std::vector<SweepCell> rows;
    // Evaluator OCR run on the unrestored LR crops.
    double lr_word_acc = 0.0;
    double lr_cer = 0.0;
    std::string config_hash;
    std::uint64_t seed = 0;
};

// Item i is restored with seed hash_keys({seed, i}) in every cell, so cells differ only in
// (omega, R).
SweepTable sweep(const std::vector<EvalItem>& items, const RestoreFn& restorer, const SweepSpec& spec);

// {rows: [{omega, R, word_acc, cer, n, wall_ms, buckets}], config_hash, seeds, lr_baseline}
nlohmann::json table_json(const SweepTable& table);
std::string format_table(const SweepTable& table);

}  // namespace glyphsr
