#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "glyphsr/diffusion.hpp"
#include "glyphsr/image.hpp"
#include "glyphsr/nn/layers.hpp"
#include "glyphsr/rng.hpp"

namespace testing {

using namespace glyphsr;

inline ImagePlane random_plane(int h, int w, int c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    ImagePlane p(h, w, c);
    KeyedRng rng{seed, 0x7e57};
    for (double& v : p.data) v = rng.uniform(lo, hi);
    return p;
}

inline std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    KeyedRng rng{seed, 0x7e58};
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Independent UTF-8 encoder for the fuzz oracle.
inline std::string utf8(char32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xC0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        s += static_cast<char>(0xE0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        s += static_cast<char>(0xF0 | (cp >> 18));
        s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return s;
}

// Mix of ASCII, Latin-1, CJK and astral code points, at most max_bytes long.
inline std::string random_text(KeyedRng& rng, int max_bytes) {
    std::string s;
    const int target = rng.uniform_int(0, max_bytes);
    for (int guard = 0; guard < 200; ++guard) {
        char32_t cp;
        switch (rng.uniform_int(0, 3)) {
            case 0: cp = static_cast<char32_t>(rng.uniform_int(0x20, 0x7E)); break;
            case 1: cp = static_cast<char32_t>(rng.uniform_int(0xA0, 0xFF)); break;
            case 2: cp = static_cast<char32_t>(rng.uniform_int(0x4E00, 0x9FFF)); break;
            default: cp = static_cast<char32_t>(rng.uniform_int(0x1F300, 0x1FAFF)); break;
        }
        const std::string piece = utf8(cp);
        if (static_cast<int>(s.size() + piece.size()) > target) break;
        s += piece;
    }
    return s;
}

inline ImagePlane constant_plane(int h, int w, int c, double v) { return ImagePlane(h, w, c, v); }

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("glyphsr_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.denoiser = DenoiserConfig::tiny();
    c.text.d_model = 8;
    c.text.d_ff = 16;
    c.text.n_heads = 2;
    c.text.n_layers = 2;
    c.text.max_len = 6;
    c.schedule = {50, 1e-3, 0.2};
    c.init_seed = 11;
    return c;
}

// Overwrites every parameter with uniform noise so zero-initialized layers take part.
inline void randomize(nn::ParamStore& store, std::uint64_t seed, double scale = 0.5) {
    for (auto& p : store.entries()) {
        KeyedRng rng{seed, std::hash<std::string>{}(p.name)};
        for (double& v : p.tensor.values()) v = rng.uniform(-scale, scale);
    }
}

}  // namespace testing
