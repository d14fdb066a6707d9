#include "glyphsr/nn/layers.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "glyphsr/rng.hpp"

namespace glyphsr::nn {

namespace {

std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

}  // namespace

Tensor ParamStore::create(const std::string& name, Shape shape, Init init, double scale) {
    if (find(name)) throw std::logic_error("duplicate parameter " + name);
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n, 0.0);
    KeyedRng rng{seed_, name_hash(name)};
    switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(data.begin(), data.end(), 1.0);
            break;
        case Init::Uniform:
            for (double& v : data) v = rng.uniform(-scale, scale);
            break;
        case Init::Normal:
            for (double& v : data) v = scale * rng.normal();
            break;
    }
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
    params_.push_back({name, t});
    return t;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p.tensor;
    }
    return nullptr;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : params_) {
        if (p.name.rfind(prefix, 0) == 0) p.tensor.set_requires_grad(trainable);
    }
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.create(name + ".weight", {out, in}, Init::Uniform, bound);
    if (with_bias) bias = store.create(name + ".bias", {out}, Init::Uniform, bound);
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int k, bool zero_init) : kernel(k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    weight = store.create(name + ".weight", {out, in, k, k}, zero_init ? Init::Zeros : Init::Uniform, bound);
    bias = store.create(name + ".bias", {out}, zero_init ? Init::Zeros : Init::Uniform, bound);
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int channels, int g) : groups(g) {
    gamma = store.create(name + ".gamma", {channels}, Init::Ones);
    beta = store.create(name + ".beta", {channels}, Init::Zeros);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
    gamma = store.create(name + ".gamma", {dim}, Init::Ones);
    beta = store.create(name + ".beta", {dim}, Init::Zeros);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, int d_query, int d_context, int h)
    : to_q(store, name + ".q", d_query, d_query, false),
      to_k(store, name + ".k", d_context, d_query, false),
      to_v(store, name + ".v", d_context, d_query, false),
      to_out(store, name + ".out", d_query, d_query),
      heads(h) {}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& context,
                                      const std::vector<std::uint8_t>& key_mask) const {
    return to_out(attention(to_q(x), to_k(context), to_v(context), heads, key_mask));
}

std::vector<double> sinusoidal_embedding(const std::vector<double>& positions, int dim) {
    const int half = dim / 2;
    std::vector<double> out(positions.size() * dim, 0.0);
    for (std::size_t p = 0; p < positions.size(); ++p) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
            out[p * dim + i] = std::sin(positions[p] * freq);
            out[p * dim + half + i] = std::cos(positions[p] * freq);
        }
    }
    return out;
}

}  // namespace glyphsr::nn
