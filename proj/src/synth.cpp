#include "glyphsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "glyphsr/errors.hpp"
#include "glyphsr/geometry.hpp"
#include "glyphsr/parallel.hpp"
#include "glyphsr/png_io.hpp"
#include "glyphsr/rng.hpp"
#include "glyphsr/textcodec.hpp"

namespace glyphsr {

namespace {

#include "atlas_data.inc"

using json = nlohmann::json;

GlyphAtlas build_default_atlas() {
    GlyphAtlas atlas;
    atlas.cell_h = 16;
    atlas.cell_w = 8;
    for (const auto& p : kPatterns) {
        atlas.charset += decode_utf8(p.utf8)[0];
        std::vector<std::uint8_t> bmp(static_cast<std::size_t>(atlas.cell_h) * atlas.cell_w, 0);
        // Dots are doubled vertically into rows 1..14; 5-wide Latin sits one column in.
        const int x_off = p.cols == 5 ? 1 : 0;
        for (int r = 0; r < 7; ++r) {
            for (int c = 0; c < p.cols; ++c) {
                if (p.rows[r][c] != '#') continue;
                for (int k = 0; k < 2; ++k) bmp[static_cast<std::size_t>(1 + 2 * r + k) * atlas.cell_w + x_off + c] = 1;
            }
        }
        atlas.bitmaps.push_back(std::move(bmp));
    }
    return atlas;
}

void json_to_params(const json& j, DegradeParams& p) {
    p.blur_sigma = j.at("blur_sigma").get<double>();
    p.noise_std = j.at("noise_std").get<double>();
    p.downsample = j.at("downsample").get<double>();
    p.quantize_levels = j.at("quantize_levels").get<int>();
}

json params_to_json(const DegradeParams& p) {
    return json{{"blur_sigma", p.blur_sigma},
                {"noise_std", p.noise_std},
                {"downsample", p.downsample},
                {"quantize_levels", p.quantize_levels}};
}

void check_range(const Range& r, const char* name, double min_lo) {
    if (!(r.lo <= r.hi) || r.lo < min_lo || !std::isfinite(r.hi))
        throw InvalidRange(std::string("degradation range ") + name + " is invalid");
}

// Box weights of the source interval [a, b) over integer pixels, accumulated per output cell.
struct AreaTaps {
    std::vector<int> begin;
    std::vector<std::vector<double>> weights;
};

AreaTaps area_taps(int in, int out) {
    AreaTaps taps;
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double a = o * ratio, b = (o + 1) * ratio;
        const int first = static_cast<int>(std::floor(a));
        const int last = std::min(in - 1, static_cast<int>(std::ceil(b)) - 1);
        std::vector<double> w;
        for (int i = first; i <= last; ++i) w.push_back((std::min(b, i + 1.0) - std::max(a, static_cast<double>(i))) / ratio);
        taps.begin.push_back(first);
        taps.weights.push_back(std::move(w));
    }
    return taps;
}

ImagePlane single_pass(const ImagePlane& in, const DegradeParams& p, KeyedRng& noise_rng) {
    ImagePlane img = lowpass(in, p.blur_sigma);
    if (p.noise_std > 0.0) {
        for (double& v : img.data) v += p.noise_std * noise_rng.normal();
    }
    ImagePlane small = area_downsample(img, p.downsample);
    if (p.quantize_levels < 256) {
        const double steps = p.quantize_levels - 1;
        for (double& v : small.data) {
            const double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
            v = std::round(u * steps) / steps * 2.0 - 1.0;
        }
    }
    return clamp_unit(resize_bilinear(small, in.height, in.width));
}

std::string utf8_of(const std::u32string& s) { return encode_utf8(s); }

}  // namespace

int GlyphAtlas::index_of(char32_t c) const {
    const auto pos = charset.find(c);
    return pos == std::u32string::npos ? -1 : static_cast<int>(pos);
}

int GlyphAtlas::pitch(int height) const {
    return std::max(1, static_cast<int>(std::lround(static_cast<double>(cell_w) * height / cell_h)));
}

void GlyphAtlas::validate() const {
    if (cell_h <= 0 || cell_w <= 0) throw ConfigError("atlas cell size must be positive");
    if (bitmaps.size() != charset.size()) throw ConfigError("atlas needs one bitmap per charset entry");
    for (const auto& b : bitmaps) {
        if (b.size() != static_cast<std::size_t>(cell_h) * cell_w) throw ConfigError("atlas bitmaps must share dimensions");
    }
    for (std::size_t i = 0; i < charset.size(); ++i) {
        if (charset.find(charset[i], i + 1) != std::u32string::npos) throw ConfigError("atlas charset has duplicates");
    }
}

const GlyphAtlas& default_atlas() {
    static const GlyphAtlas atlas = build_default_atlas();
    return atlas;
}

void save_atlas(const std::filesystem::path& path, const GlyphAtlas& atlas) {
    atlas.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write atlas " + path.string());
    const json header{{"charset", utf8_of(atlas.charset)}, {"cell_h", atlas.cell_h}, {"cell_w", atlas.cell_w}};
    out << header.dump() << '\n';
    for (const auto& b : atlas.bitmaps) out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) throw IOFailure("short write to atlas " + path.string());
}

GlyphAtlas load_atlas(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read atlas " + path.string());
    std::string line;
    std::getline(in, line);
    GlyphAtlas atlas;
    try {
        const json header = json::parse(line);
        const std::string cs = header.at("charset").get<std::string>();
        if (!is_valid_utf8(cs)) throw ConfigError("atlas charset is not valid UTF-8");
        const auto cps = decode_utf8(cs);
        atlas.charset.assign(cps.begin(), cps.end());
        atlas.cell_h = header.at("cell_h").get<int>();
        atlas.cell_w = header.at("cell_w").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad atlas header: ") + e.what());
    }
    if (atlas.cell_h <= 0 || atlas.cell_w <= 0) throw ConfigError("atlas cell size must be positive");
    const std::size_t cell = static_cast<std::size_t>(atlas.cell_h) * atlas.cell_w;
    for (std::size_t i = 0; i < atlas.charset.size(); ++i) {
        std::vector<std::uint8_t> b(cell);
        in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(cell));
        if (static_cast<std::size_t>(in.gcount()) != cell) throw IOFailure("atlas bitmap block is truncated");
        for (auto& v : b) v = v ? 1 : 0;
        atlas.bitmaps.push_back(std::move(b));
    }
    atlas.validate();
    return atlas;
}

ImagePlane render_glyph(int index, const GlyphAtlas& atlas, int height) {
    const int pitch = atlas.pitch(height);
    ImagePlane out(height, pitch, 1, 1.0);
    if (index < 0) return out;
    const auto& bmp = atlas.bitmaps[static_cast<std::size_t>(index)];
    for (int y = 0; y < height; ++y) {
        const int cy = std::min(atlas.cell_h - 1, y * atlas.cell_h / height);
        for (int x = 0; x < pitch; ++x) {
            const int cx = std::min(atlas.cell_w - 1, x * atlas.cell_w / pitch);
            if (bmp[static_cast<std::size_t>(cy) * atlas.cell_w + cx]) out.at(y, x) = -1.0;
        }
    }
    return out;
}

ImagePlane render_text(const std::string& text, const GlyphAtlas& atlas, int height) {
    if (height <= 0) throw InvalidRange("render height must be positive");
    if (!is_valid_utf8(text)) throw UnknownGlyph("text is not valid UTF-8");
    const auto cps = decode_utf8(text);
    std::vector<int> idx;
    for (char32_t c : cps) {
        const int i = atlas.index_of(c);
        if (i < 0) throw UnknownGlyph("no glyph for " + encode_utf8(c));
        idx.push_back(i);
    }
    const int pitch = atlas.pitch(height);
    const int cells = std::max<int>(1, static_cast<int>(idx.size()));
    ImagePlane out(height, cells * pitch, 1, 1.0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const ImagePlane g = render_glyph(idx[k], atlas, height);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < pitch; ++x) out.at(y, static_cast<int>(k) * pitch + x) = g.at(y, x);
        }
    }
    return out;
}

ImagePlane fit_width(const ImagePlane& line, int width) {
    ImagePlane out(line.height, width, line.channels, 1.0);
    const int w = std::min(width, line.width);
    for (int y = 0; y < line.height; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < line.channels; ++c) out.at(y, x, c) = line.at(y, x, c);
        }
    }
    return out;
}

void DegradationConfig::validate() const {
    check_range(blur_sigma, "blur_sigma", 0.0);
    check_range(noise_std, "noise_std", 0.0);
    check_range(downsample, "downsample", 1.0);
    check_range(quantize_levels, "quantize_levels", 2.0);
}

DegradationConfig DegradationConfig::identity() {
    DegradationConfig c;
    c.blur_sigma = {0, 0};
    c.noise_std = {0, 0};
    c.downsample = {1, 1};
    c.quantize_levels = {256, 256};
    return c;
}

ImagePlane area_downsample(const ImagePlane& image, double factor) {
    if (!(factor >= 1.0)) throw InvalidRange("downsample factor must be >= 1");
    const int oh = std::max(1, static_cast<int>(std::lround(image.height / factor)));
    const int ow = std::max(1, static_cast<int>(std::lround(image.width / factor)));
    if (oh == image.height && ow == image.width) return image;
    const AreaTaps ty = area_taps(image.height, oh), tx = area_taps(image.width, ow);
    // Rows first, then columns.
    ImagePlane rows(oh, image.width, image.channels, 0.0);
    for (int o = 0; o < oh; ++o) {
        for (std::size_t k = 0; k < ty.weights[o].size(); ++k) {
            const double w = ty.weights[o][k];
            const int sy = ty.begin[o] + static_cast<int>(k);
            for (int x = 0; x < image.width; ++x) {
                for (int c = 0; c < image.channels; ++c) rows.at(o, x, c) += w * image.at(sy, x, c);
            }
        }
    }
    ImagePlane out(oh, ow, image.channels, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int o = 0; o < ow; ++o) {
            for (std::size_t k = 0; k < tx.weights[o].size(); ++k) {
                const double w = tx.weights[o][k];
                const int sx = tx.begin[o] + static_cast<int>(k);
                for (int c = 0; c < image.channels; ++c) out.at(y, o, c) += w * rows.at(y, sx, c);
            }
        }
    }
    return out;
}

ImagePlane resize_bilinear(const ImagePlane& image, int out_height, int out_width) {
    if (out_height == image.height && out_width == image.width) return image;
    ImagePlane out(out_height, out_width, image.channels);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(y0, x0, c) + wx * (image.at(y0, x1, c) - image.at(y0, x0, c));
                const double bot = image.at(y1, x0, c) + wx * (image.at(y1, x1, c) - image.at(y1, x0, c));
                out.at(y, x, c) = top + wy * (bot - top);
            }
        }
    }
    return out;
}

DegradeResult degrade_with_params(const ImagePlane& hr, const DegradationConfig& config, std::uint64_t seed) {
    config.validate();
    DegradeResult r{hr, {}};
    const int passes = config.second_order ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
        KeyedRng draw({seed, static_cast<std::uint64_t>(pass), 0});
        DegradeParams p;
        p.blur_sigma = draw.uniform(config.blur_sigma.lo, config.blur_sigma.hi);
        p.noise_std = draw.uniform(config.noise_std.lo, config.noise_std.hi);
        p.downsample = draw.uniform(config.downsample.lo, config.downsample.hi);
        p.quantize_levels = draw.uniform_int(static_cast<int>(config.quantize_levels.lo),
                                             static_cast<int>(config.quantize_levels.hi));
        KeyedRng noise({seed, static_cast<std::uint64_t>(pass), 1});
        r.image = single_pass(r.image, p, noise);
        r.passes.push_back(p);
    }
    return r;
}

ImagePlane degrade(const ImagePlane& hr, const DegradationConfig& config, std::uint64_t seed) {
    return degrade_with_params(hr, config, seed).image;
}

std::string language_tag(const std::u32string& text) {
    bool latin = false, other = false;
    for (char32_t c : text) (c < 0x80 ? latin : other) = true;
    if (latin && other) return "mixed";
    return other ? "cjk" : "latin";
}

std::string manifest_line(const ManifestRecord& r) {
    json params = json::array();
    for (const auto& p : r.degrade_params) params.push_back(params_to_json(p));
    const json j{{"id", r.id},
                 {"hr_path", r.hr_path},
                 {"lr_path", r.lr_path},
                 {"text", r.text},
                 {"height_px", r.height_px},
                 {"language_tag", r.language_tag},
                 {"seed", r.seed},
                 {"degrade_params", params}};
    return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
    try {
        const json j = json::parse(line);
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.hr_path = j.at("hr_path").get<std::string>();
        r.lr_path = j.at("lr_path").get<std::string>();
        r.text = j.at("text").get<std::string>();
        r.height_px = j.at("height_px").get<int>();
        r.language_tag = j.value("language_tag", "");
        r.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("degrade_params")) {
            for (const auto& p : j["degrade_params"]) {
                DegradeParams d;
                json_to_params(p, d);
                r.degrade_params.push_back(d);
            }
        }
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad manifest record: ") + e.what());
    }
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot read manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        // The header line carries no record id.
        if (line.find("\"id\"") == std::string::npos) continue;
        out.push_back(parse_manifest_line(line));
    }
    return out;
}

DatasetSummary build_dataset(const DatasetSpec& spec, const GlyphAtlas& atlas, const std::filesystem::path& out_dir) {
    spec.degrade.validate();
    if (spec.count < 0 || spec.dup < 1) throw InvalidRange("dataset count must be >= 0 and dup >= 1");
    if (spec.min_len < 1 || spec.max_len < spec.min_len) throw InvalidRange("text length range is invalid");
    if (spec.charset.empty() && spec.count > 0) throw ConfigError("dataset charset is empty");
    for (char32_t c : spec.charset) {
        if (!atlas.contains(c)) throw UnknownGlyph("charset entry without glyph: " + encode_utf8(c));
    }
    if (spec.max_len * atlas.pitch(spec.line_height) > spec.line_width)
        throw ConfigError("longest text does not fit the line width");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "hr", ec);
    std::filesystem::create_directories(out_dir / "lr", ec);
    if (ec) throw IOFailure("cannot create " + out_dir.string() + ": " + ec.message());

    // Draw texts sequentially (cheap) so the accepted index set does not depend on workers.
    struct Draw {
        std::uint64_t key;
        std::u32string text;
        int height;
    };
    std::vector<Draw> draws;
    DatasetSummary summary;
    for (std::uint64_t k = 0; static_cast<int>(draws.size()) < spec.count; ++k) {
        KeyedRng rng({spec.seed, k, 0});
        const int h = rng.uniform_int(spec.source_height_lo, spec.source_height_hi);
        if (h < kMinTextHeight || h > kMaxTextHeight) {
            ++summary.rejected;
            continue;
        }
        const int len = rng.uniform_int(spec.min_len, spec.max_len);
        std::u32string text;
        for (int i = 0; i < len; ++i) text += spec.charset[rng.uniform_int(0, static_cast<int>(spec.charset.size()) - 1)];
        draws.push_back({k, std::move(text), h});
    }

    std::vector<std::vector<ManifestRecord>> records(draws.size());
    std::vector<std::string> failures(draws.size());
    parallel_for(draws.size(), [&](std::size_t i) {
        try {
            const Draw& d = draws[i];
            char name[32];
            std::snprintf(name, sizeof name, "%06zu", i);
            const ImagePlane hr = fit_width(render_text(utf8_of(d.text), atlas, spec.line_height), spec.line_width);
            const std::string hr_rel = std::string("hr/") + name + ".png";
            write_png(out_dir / hr_rel, hr);
            for (int r = 0; r < spec.dup; ++r) {
                const std::uint64_t seed = hash_keys({spec.seed, d.key, 1, static_cast<std::uint64_t>(r)});
                DegradeResult lr = degrade_with_params(hr, spec.degrade, seed);
                char lr_name[48];
                std::snprintf(lr_name, sizeof lr_name, "lr/%06zu_%02d.png", i, r);
                write_png(out_dir / lr_name, lr.image);
                ManifestRecord rec;
                rec.id = std::string(name) + "_" + std::to_string(r);
                rec.hr_path = hr_rel;
                rec.lr_path = lr_name;
                rec.text = utf8_of(d.text);
                rec.height_px = d.height;
                rec.language_tag = language_tag(d.text);
                rec.seed = seed;
                rec.degrade_params = std::move(lr.passes);
                records[i].push_back(std::move(rec));
            }
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (const auto& f : failures) {
        if (!f.empty()) throw IOFailure(f);
    }

    summary.manifest = out_dir / "manifest.jsonl";
    const auto tmp = out_dir / "manifest.jsonl.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IOFailure("cannot write manifest in " + out_dir.string());
        const json header{{"schema", "glyphsr.manifest"},
                          {"schema_version", 1},
                          {"charset", utf8_of(spec.charset)},
                          {"count", spec.count},
                          {"dup", spec.dup},
                          {"seed", spec.seed},
                          {"line_height", spec.line_height},
                          {"line_width", spec.line_width}};
        out << header.dump() << '\n';
        for (const auto& group : records) {
            for (const auto& rec : group) out << manifest_line(rec) << '\n';
        }
        if (!out) throw IOFailure("short write to manifest");
    }
    std::filesystem::rename(tmp, summary.manifest, ec);
    if (ec) throw IOFailure("cannot move manifest into place: " + ec.message());
    summary.hr_count = draws.size();
    summary.lr_count = draws.size() * static_cast<std::size_t>(spec.dup);
    return summary;
}

}  // namespace glyphsr
