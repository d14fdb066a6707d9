#include "glyphsr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "glyphsr/checkpoint.hpp"
#include "glyphsr/config.hpp"
#include "glyphsr/errors.hpp"
#include "glyphsr/evalkit.hpp"
#include "glyphsr/ocr.hpp"
#include "glyphsr/pipeline.hpp"
#include "glyphsr/png_io.hpp"
#include "glyphsr/synth.hpp"
#include "glyphsr/textcodec.hpp"
#include "glyphsr/trainer.hpp"

namespace glyphsr {

namespace {

namespace fs = std::filesystem;

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IOFailure("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
    return buf;
}

RunConfig base_config(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

std::u32string read_charset(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read charset file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (!is_valid_utf8(text)) throw ConfigError("charset file is not valid UTF-8");
    std::u32string out;
    for (char32_t c : decode_utf8(text)) {
        if (c == U' ' || c == U'\n' || c == U'\r' || c == U'\t') continue;
        if (out.find(c) == std::u32string::npos) out += c;
    }
    return out;
}

std::u32string to_u32(const std::string& s) {
    const auto v = decode_utf8(s);
    return {v.begin(), v.end()};
}

// Resolves a --data argument: a manifest file or a directory holding manifest.jsonl.
fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.jsonl" : p; }

struct GenArgs {
    std::string charset_file, out, config;
    int count = -1, dup = -1;
    long long seed = -1;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    RunConfig cfg = base_config(a.config);
    if (!a.charset_file.empty()) cfg.data.charset = encode_utf8(read_charset(a.charset_file));
    if (a.count >= 0) cfg.data.count = a.count;
    if (a.dup >= 0) cfg.data.dup = a.dup;
    if (a.seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(a.seed);
    cfg.validate();

    DatasetSpec spec;
    spec.charset = to_u32(cfg.data.charset);
    spec.count = cfg.data.count;
    spec.dup = cfg.data.dup;
    spec.min_len = cfg.data.min_len;
    spec.max_len = cfg.data.max_len;
    spec.line_height = cfg.model.denoiser.height;
    spec.line_width = cfg.model.denoiser.width;
    spec.source_height_lo = cfg.data.source_height_lo;
    spec.source_height_hi = cfg.data.source_height_hi;
    spec.degrade = cfg.data.degrade;
    spec.seed = cfg.data.seed;
    const DatasetSummary s = build_dataset(spec, default_atlas(), a.out);
    out << "config_hash " << config_hash(to_json(cfg)) << '\n';
    out << "manifest " << s.manifest.string() << '\n';
    out << "hr_count " << s.hr_count << "\nlr_count " << s.lr_count << "\nrejected " << s.rejected << '\n';
    out << "manifest_hash " << file_hash(s.manifest) << '\n';
    return kExitOk;
}

struct TrainArgs {
    std::string data, config, out_ckpt, log;
    long long steps = 0;
    bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    const RunConfig cfg = base_config(a.config);
    out << "config_hash " << config_hash(to_json(cfg)) << '\n';
    nn::MatmulPrecisionGuard fast(nn::MatmulPrecision::Float);

    RestorationModel model(cfg.model);
    nn::AdamConfig ac;
    ac.lr = cfg.train.lr;
    ac.clip_norm = cfg.train.clip_norm;
    nn::Adam opt(model.params(), ac);

    TrainOptions opts;
    opts.checkpoint = a.out_ckpt;
    opts.loss_log = a.log.empty() ? fs::path(a.out_ckpt + ".loss.jsonl") : fs::path(a.log);
    if (a.resume) {
        if (!fs::exists(a.out_ckpt)) throw IOFailure("--resume given but " + a.out_ckpt + " does not exist");
        opts.start_step = load_checkpoint(a.out_ckpt, model, &opt).step;
    }
    opts.end_step = std::max(opts.start_step, a.steps);
    opts.on_log = [&out](const LossEntry& e) {
        out << "step " << e.step << " loss " << std::setprecision(6) << e.loss << " smoothed " << e.smoothed
            << " grad_norm " << e.grad_norm << " ms " << std::setprecision(4) << e.ms << '\n';
        out.flush();
    };
    if (opts.end_step == opts.start_step) {
        save_checkpoint(a.out_ckpt, model, opts.start_step, &opt,
                        Json{{"run_config", to_json(cfg)}, {"config_hash", config_hash(to_json(cfg))}});
        out << "checkpoint " << a.out_ckpt << " step " << opts.start_step << '\n';
        return kExitOk;
    }
    const TrainingSet data(manifest_path(a.data), cfg.model.denoiser.height, cfg.model.denoiser.width);
    const TrainResult r = train(cfg, data, model, opt, opts);
    out << "checkpoint " << a.out_ckpt << " step " << r.final_step << " retries " << r.retries << '\n';
    return kExitOk;
}

// "toy", "none", "oracle:<rate>" or "cmd:<command>".
struct OcrChoice {
    std::string kind = "toy";
    double rate = 0.0;
    std::string command;
};

OcrChoice parse_ocr(const std::string& s) {
    OcrChoice c;
    if (s == "toy" || s == "none") {
        c.kind = s;
    } else if (s.rfind("oracle:", 0) == 0) {
        c.kind = "oracle";
        try {
            std::size_t used = 0;
            c.rate = std::stod(s.substr(7), &used);
            if (used != s.size() - 7) throw std::invalid_argument(s);
        } catch (const std::exception&) {
            throw ConfigError("bad oracle rate in --ocr " + s);
        }
        if (c.rate < 0.0 || c.rate > 1.0) throw ConfigError("oracle rate must lie in [0, 1]");
    } else if (s.rfind("cmd:", 0) == 0 && s.size() > 4) {
        c.kind = "cmd";
        c.command = s.substr(4);
    } else {
        throw ConfigError("--ocr must be toy, none, oracle:<rate> or cmd:<path>");
    }
    return c;
}

std::vector<double> parse_list(const std::string& s, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad number '") + item + "' in " + flag);
        }
    }
    if (out.empty()) throw ConfigError(std::string(flag) + " is empty");
    return out;
}

// 16 px at the desk width; narrower models get a proportionally smaller seam.
int tile_overlap(int line_width) { return std::min(16, line_width / 4); }

struct RestoreArgs {
    std::string ckpt, in, out, ocr = "toy", regions, config, text;
    double omega = 1.0;
    int iters = 0;
    int factor = 2;
    int steps = 5;
    long long seed = 0;
    bool null_image = false;
};

int cmd_restore(const RestoreArgs& a, std::ostream& out) {
    nn::MatmulPrecisionGuard fast(nn::MatmulPrecision::Float);
    CheckpointHeader header;
    auto model = load_model(a.ckpt, &header);
    if (!a.config.empty()) {
        const RunConfig cfg = load_run_config(a.config);
        if (to_json(cfg.model) != to_json(model->config()))
            throw CheckpointMismatch("--config model section differs from the checkpoint");
    }
    GuidanceConfig g;
    g.omega = a.omega;
    g.R = a.iters;
    g.ddim_steps = a.steps;
    g.null_image = a.null_image;
    g.seed = static_cast<std::uint64_t>(a.seed);
    g.validate();
    const OcrChoice oc = parse_ocr(a.ocr);
    const Json resolved{{"model", to_json(model->config())}, {"omega", g.omega}, {"R", g.R}, {"ddim_steps", g.ddim_steps},
                        {"null_image", g.null_image}, {"seed", g.seed}, {"ocr", a.ocr}, {"factor", a.factor}};
    out << "config_hash " << config_hash(resolved) << '\n';

    std::unique_ptr<SubprocessOcr> external;
    if (oc.kind == "cmd") external = std::make_unique<SubprocessOcr>(oc.command);
    const auto& atlas = default_atlas();
    const std::u32string charset = atlas.charset;
    // The oracle needs a reference transcript: --text, or the region's text in image mode.
    auto make_ocr = [&](const std::optional<std::string>& gt) -> RecognizeFn {
        if (oc.kind == "none") return [](const ImagePlane&) { return std::string(); };
        if (oc.kind == "toy") return [&atlas](const ImagePlane& img) { return template_recognize(img, atlas).text; };
        if (oc.kind == "cmd") return [&external](const ImagePlane& img) { return external->recognize(img); };
        if (!gt) throw ConfigError("--ocr oracle needs a reference transcript (--text or region text)");
        return [gt, rate = oc.rate, &charset, seed = g.seed](const ImagePlane&) {
            return noisy_oracle(*gt, rate, charset, seed).text;
        };
    };

    const RestoreFn restorer = model_restorer(*model);
    Json report;
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path out_path(a.out);
    if (a.regions.empty()) {
        const int h = model->config().denoiser.height, w = model->config().denoiser.width;
        const ImagePlane crop = read_png(a.in);
        if (crop.height != h) throw ShapeMismatch("crop height must be " + std::to_string(h));
        const LineResult r = restore_line(crop, w, g, make_ocr(a.text.empty() ? std::nullopt : std::optional(a.text)),
                                          restorer, tile_overlap(w));
        write_png(out_path, r.image);
        report = {{"mode", "crop"},
                  {"restore_calls", r.restore_calls},
                  {"ocr_calls", r.ocr_calls},
                  {"tiles", r.tiles},
                  {"transcript_history", r.transcripts}};
    } else {
        const ImagePlane image = read_png(a.in);
        const auto regions = read_region_manifest(a.regions, model->config().denoiser.height);
        BicubicUpscaler f;
        PipelineOptions po;
        po.factor = a.factor;
        po.line_width = model->config().denoiser.width;
        po.overlap = tile_overlap(po.line_width);
        const FullImageResult r = restore_full_image(image, regions, f, restorer, g,
                                                     [&](const TextRegion& region) { return make_ocr(region.text); }, po);
        write_png(out_path, r.image);
        report = report_json(r.report);
        report["mode"] = "image";
    }
    report["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    report["config_hash"] = config_hash(resolved);
    report["checkpoint_step"] = header.step;
    const fs::path report_path = fs::path(a.out).replace_extension(".json");
    std::ofstream rep(report_path);
    if (!rep) throw IOFailure("cannot write " + report_path.string());
    rep << report.dump(2) << '\n';
    out << "wrote " << a.out << " and " << report_path.string() << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::string ckpt, data, ocr = "toy", omega_list = "1", r_list = "0", out, config;
    int limit = 0;
    int steps = 5;
    long long seed = 0;
};

int cmd_sweep(const EvalArgs& a, std::ostream& out) {
    nn::MatmulPrecisionGuard fast(nn::MatmulPrecision::Float);
    auto model = load_model(a.ckpt);
    if (!a.config.empty()) {
        const RunConfig cfg = load_run_config(a.config);
        if (to_json(cfg.model) != to_json(model->config()))
            throw CheckpointMismatch("--config model section differs from the checkpoint");
    }
    const OcrChoice oc = parse_ocr(a.ocr);
    SweepSpec spec;
    spec.omegas = parse_list(a.omega_list, "--omega-list");
    for (double r : parse_list(a.r_list, "--r-list")) {
        if (r < 0 || r != std::floor(r)) throw ConfigError("--r-list entries must be non-negative integers");
        spec.rs.push_back(static_cast<int>(r));
    }
    spec.ddim_steps = a.steps;
    spec.seed = static_cast<std::uint64_t>(a.seed);
    spec.limit = a.limit;

    const auto& atlas = default_atlas();
    std::unique_ptr<SubprocessOcr> external;
    if (oc.kind == "cmd") external = std::make_unique<SubprocessOcr>(oc.command);
    spec.loop_ocr = [&](const EvalItem& item, std::uint64_t seed) -> RecognizeFn {
        if (oc.kind == "none") return [](const ImagePlane&) { return std::string(); };
        if (oc.kind == "toy") return [&atlas](const ImagePlane& img) { return template_recognize(img, atlas).text; };
        if (oc.kind == "cmd") return [&external](const ImagePlane& img) { return external->recognize(img); };
        return [gt = item.gt_text, rate = oc.rate, &atlas, seed](const ImagePlane&) {
            return noisy_oracle(gt, rate, atlas.charset, seed).text;
        };
    };
    spec.evaluator = [&atlas](const ImagePlane& img) { return template_recognize(img, atlas).text; };

    const int h = model->config().denoiser.height, w = model->config().denoiser.width;
    const auto items = load_eval_items(manifest_path(a.data), h, w, spec.limit);
    const Json resolved{{"model", to_json(model->config())}, {"omegas", spec.omegas}, {"rs", spec.rs},
                        {"ddim_steps", spec.ddim_steps}, {"seed", spec.seed}, {"ocr", a.ocr},
                        {"data", manifest_path(a.data).string()}, {"n", items.size()}};
    spec.config_hash = config_hash(resolved);
    out << "config_hash " << spec.config_hash << '\n';

    const SweepTable table = sweep(items, model_restorer(*model), spec);
    out << format_table(table);
    if (!a.out.empty()) {
        std::ofstream j(a.out);
        if (!j) throw IOFailure("cannot write " + a.out);
        j << table_json(table).dump(2) << '\n';
        std::ofstream t(fs::path(a.out).replace_extension(".txt"));
        t << format_table(table);
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"OCR-guided text-line super-resolution", "glyphsr"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "render and degrade a synthetic dataset");
    g->add_option("--charset-file", gen.charset_file, "UTF-8 file whose characters form the charset");
    g->add_option("--count", gen.count, "distinct texts")->check(CLI::NonNegativeNumber);
    g->add_option("--dup", gen.dup, "degraded copies per text")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "dataset seed")->check(CLI::NonNegativeNumber);
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--config", gen.config, "run config JSON");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train the restoration model");
    t->add_option("--data", tr.data, "manifest.jsonl or its directory")->required();
    t->add_option("--config", tr.config, "run config JSON");
    t->add_option("--steps", tr.steps, "total optimizer steps")->required()->check(CLI::NonNegativeNumber);
    t->add_option("--out-ckpt", tr.out_ckpt, "checkpoint path")->required();
    t->add_option("--log", tr.log, "loss log (JSONL); default <out-ckpt>.loss.jsonl");
    t->add_flag("--resume", tr.resume, "continue from --out-ckpt");

    RestoreArgs rs;
    auto* r = app.add_subcommand("restore", "restore a crop, or a full image with a region manifest");
    r->add_option("--ckpt", rs.ckpt, "checkpoint")->required();
    r->add_option("--in", rs.in, "input PNG")->required();
    r->add_option("--out", rs.out, "output PNG (report goes next to it as .json)")->required();
    r->add_option("--regions", rs.regions, "region manifest (JSONL); enables full-image mode");
    r->add_option("--omega", rs.omega, "guidance weight");
    r->add_option("--iters", rs.iters, "OCR iterations R")->check(CLI::NonNegativeNumber);
    r->add_option("--ocr", rs.ocr, "toy | none | oracle:<rate> | cmd:<path>");
    r->add_option("--text", rs.text, "reference transcript for the oracle OCR");
    r->add_option("--seed", rs.seed, "sampling seed")->check(CLI::NonNegativeNumber);
    r->add_option("--steps", rs.steps, "DDIM steps")->check(CLI::PositiveNumber);
    r->add_option("--factor", rs.factor, "full-image upscale factor")->check(CLI::IsMember({1, 2, 4}));
    r->add_flag("--null-image", rs.null_image, "text-only generation");
    r->add_option("--config", rs.config, "run config JSON to check against the checkpoint");

    EvalArgs ev;
    auto add_eval = [&ev](CLI::App* c) {
        c->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
        c->add_option("--data", ev.data, "evaluation manifest or its directory")->required();
        c->add_option("--ocr", ev.ocr, "in-loop OCR: toy | none | oracle:<rate> | cmd:<path>");
        c->add_option("--omega-list", ev.omega_list, "comma-separated omegas");
        c->add_option("--r-list", ev.r_list, "comma-separated R values");
        c->add_option("--out", ev.out, "JSON table path (text table beside it)");
        c->add_option("--limit", ev.limit, "use the first N records (0 = all)")->check(CLI::NonNegativeNumber);
        c->add_option("--steps", ev.steps, "DDIM steps")->check(CLI::PositiveNumber);
        c->add_option("--seed", ev.seed, "sampling seed")->check(CLI::NonNegativeNumber);
        c->add_option("--config", ev.config, "run config JSON to check against the checkpoint");
    };
    auto* e = app.add_subcommand("eval", "evaluate one or more (omega, R) cells");
    add_eval(e);
    auto* s = app.add_subcommand("sweep", "omega x R grid");
    add_eval(s);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& pe) {
        err << "error: " << pe.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (r->parsed()) return cmd_restore(rs, out);
        if (e->parsed() || s->parsed()) return cmd_sweep(ev, out);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const InvalidRange& ex) {
        err << "invalid value: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const IOFailure& ex) {
        err << "io error: " << ex.what() << '\n';
        return kExitIo;
    } catch (const NonFiniteLoss& ex) {
        err << "numeric error: " << ex.what() << '\n';
        return kExitNumeric;
    } catch (const NonFiniteActivation& ex) {
        err << "numeric error: " << ex.what() << '\n';
        return kExitNumeric;
    } catch (const CheckpointMismatch& ex) {
        err << "checkpoint mismatch: " << ex.what() << '\n';
        return kExitMismatch;
    } catch (const ShapeMismatch& ex) {
        err << "shape mismatch: " << ex.what() << '\n';
        return kExitMismatch;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}

}  // namespace glyphsr
