#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glyphsr/nn/ops.hpp"
#include "glyphsr/nn/tensor.hpp"

namespace glyphsr::nn {

enum class Init { Zeros, Ones, Uniform, Normal };

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Ordered registry of parameters. Initial values are keyed by (seed, name), so they do
// not depend on construction order.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    // Uniform uses [-scale, scale]; Normal uses stddev scale.
    Tensor create(const std::string& name, Shape shape, Init init, double scale = 0.0);

    const std::vector<NamedParam>& entries() const { return params_; }
    std::vector<NamedParam>& entries() { return params_; }
    const Tensor* find(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();
    // Toggles gradient tracking for every parameter whose name starts with prefix.
    void set_trainable(const std::string& prefix, bool trainable);

private:
    std::uint64_t seed_;
    std::vector<NamedParam> params_;
};

struct Linear {
    Tensor weight, bias;

    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in, int out, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Conv2d {
    Tensor weight, bias;
    int kernel = 3;

    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, bool zero_init = false);
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, kernel / 2); }
};

struct GroupNorm {
    Tensor gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamStore& store, const std::string& name, int channels, int groups);
    Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, int dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Q from the query stream, K/V from the context stream, output projection back to d_query.
struct MultiHeadAttention {
    Linear to_q, to_k, to_v, to_out;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& store, const std::string& name, int d_query, int d_context, int heads);
    Tensor operator()(const Tensor& x, const Tensor& context, const std::vector<std::uint8_t>& key_mask) const;
};

// Sinusoidal features for integer positions: [sin(p w_0), ..., cos(p w_0), ...].
std::vector<double> sinusoidal_embedding(const std::vector<double>& positions, int dim);

}  // namespace glyphsr::nn
