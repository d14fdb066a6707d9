#include "glyphsr/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "glyphsr/errors.hpp"
#include "glyphsr/rng.hpp"
#include "glyphsr/synth.hpp"
#include "glyphsr/textcodec.hpp"
#include "glyphsr/trainer.hpp"

namespace glyphsr {

namespace {

std::u32string to_u32(const std::string& s) {
    const auto v = decode_utf8(s);
    return {v.begin(), v.end()};
}

nlohmann::json bucket_json(const std::vector<EvalRecord>& records) {
    if (records.empty()) return {{"n", 0}};
    double word = 0.0, cer = 0.0;
    for (const auto& r : records) {
        word += r.word_correct ? 1.0 : 0.0;
        cer += r.cer;
    }
    const double n = static_cast<double>(records.size());
    return {{"n", records.size()}, {"word_acc", word / n}, {"cer", cer / n}};
}

}  // namespace

std::string normalize_text(const std::string& s) {
    std::u32string out;
    for (char32_t c : decode_utf8(s)) {
        if (c >= 0x80) {
            out += c;
        } else if (c >= U'A' && c <= U'Z') {
            out += static_cast<char32_t>(c - U'A' + U'a');
        } else if ((c >= U'a' && c <= U'z') || (c >= U'0' && c <= U'9')) {
            out += c;
        }
    }
    return encode_utf8(out);
}

int levenshtein(const std::u32string& a, const std::u32string& b) {
    std::vector<int> row(b.size() + 1);
    std::iota(row.begin(), row.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        int diag = row[0];
        row[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const int up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row.back();
}

double pair_cer(const std::string& pred, const std::string& gt) {
    const auto p = to_u32(normalize_text(pred)), g = to_u32(normalize_text(gt));
    return static_cast<double>(levenshtein(p, g)) / static_cast<double>(std::max<std::size_t>(1, g.size()));
}

double word_accuracy(const std::vector<PredGt>& pairs) {
    if (pairs.empty()) throw EmptyEvalSet("word_accuracy of an empty set");
    std::size_t hits = 0;
    for (const auto& [pred, gt] : pairs) hits += normalize_text(pred) == normalize_text(gt);
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double char_error_rate(const std::vector<PredGt>& pairs) {
    if (pairs.empty()) throw EmptyEvalSet("char_error_rate of an empty set");
    double sum = 0.0;
    for (const auto& [pred, gt] : pairs) sum += pair_cer(pred, gt);
    return sum / static_cast<double>(pairs.size());
}

EvalRecord make_record(std::string id, std::string gt, std::string pred, int height_px) {
    EvalRecord r;
    r.word_correct = normalize_text(pred) == normalize_text(gt);
    r.cer = pair_cer(pred, gt);
    r.id = std::move(id);
    r.gt_text = std::move(gt);
    r.pred_text = std::move(pred);
    r.height_px = height_px;
    return r;
}

HeightBuckets bucket_by_height(const std::vector<EvalRecord>& records) {
    HeightBuckets b;
    for (const auto& r : records) {
        if (r.height_px < 32) {
            b.small.push_back(r);
        } else if (r.height_px < 64) {
            b.medium.push_back(r);
        } else {
            b.large.push_back(r);
        }
    }
    return b;
}

std::vector<EvalItem> load_eval_items(const std::filesystem::path& manifest, int height, int width, int limit) {
    const TrainingSet data(manifest, height, width);
    const std::size_t n = limit > 0 ? std::min<std::size_t>(data.size(), static_cast<std::size_t>(limit)) : data.size();
    std::vector<EvalItem> items(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = data.record(i);
        items[i] = {rec.id, rec.text, rec.height_px, data.lr(i)};
    }
    return items;
}

SweepTable sweep(const std::vector<EvalItem>& items, const RestoreFn& restorer, const SweepSpec& spec) {
    if (spec.omegas.empty() || spec.rs.empty()) throw InvalidRange("sweep needs non-empty omega and R lists");
    if (items.empty()) throw EmptyEvalSet("sweep over an empty evaluation set");
    SweepTable table;
    table.config_hash = spec.config_hash;
    table.seed = spec.seed;

    std::vector<PredGt> lr_pairs;
    for (const auto& item : items) lr_pairs.emplace_back(spec.evaluator(item.lr), item.gt_text);
    table.lr_word_acc = word_accuracy(lr_pairs);
    table.lr_cer = char_error_rate(lr_pairs);

    for (double omega : spec.omegas) {
        for (int R : spec.rs) {
            SweepCell cell;
            cell.omega = omega;
            cell.R = R;
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<PredGt> pairs;
            for (std::size_t i = 0; i < items.size(); ++i) {
                const auto& item = items[i];
                GuidanceConfig g;
                g.omega = omega;
                g.R = R;
                g.ddim_steps = spec.ddim_steps;
                g.seed = hash_keys({spec.seed, static_cast<std::uint64_t>(i)});
                const IterativeResult r = iterative_restore(item.lr, g, spec.loop_ocr(item, g.seed), restorer);
                std::string pred = spec.evaluator(r.image);
                pairs.emplace_back(pred, item.gt_text);
                cell.records.push_back(make_record(item.id, item.gt_text, std::move(pred), item.height_px));
            }
            cell.word_acc = word_accuracy(pairs);
            cell.cer = char_error_rate(pairs);
            cell.n = static_cast<int>(pairs.size());
            cell.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            table.rows.push_back(std::move(cell));
        }
    }
    return table;
}

nlohmann::json table_json(const SweepTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : table.rows) {
        const HeightBuckets b = bucket_by_height(c.records);
        rows.push_back({{"omega", c.omega},
                        {"R", c.R},
                        {"word_acc", c.word_acc},
                        {"cer", c.cer},
                        {"n", c.n},
                        {"wall_ms", c.wall_ms},
                        {"buckets", {{"small", bucket_json(b.small)}, {"medium", bucket_json(b.medium)}, {"large", bucket_json(b.large)}}}});
    }
    return {{"rows", rows},
            {"config_hash", table.config_hash},
            {"seeds", {{"base", table.seed}, {"item", "hash_keys(base, index)"}}},
            {"lr_baseline", {{"word_acc", table.lr_word_acc}, {"cer", table.lr_cer}}}};
}

std::string format_table(const SweepTable& table) {
    // wall time stays out of the text table so reruns compare byte for byte.
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%8s %3s %9s %7s %6s\n", "omega", "R", "word_acc", "cer", "n");
    out << buf;
    for (const auto& c : table.rows) {
        std::snprintf(buf, sizeof buf, "%8.3f %3d %9.4f %7.4f %6d\n", c.omega, c.R, c.word_acc, c.cer, c.n);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%12s %9.4f %7.4f  (evaluator on LR input)\n", "lr", table.lr_word_acc, table.lr_cer);
    out << buf;
    return out.str();
}

}  // namespace glyphsr
