#pragma once

#include <string>
#include <vector>

#include "glyphsr/nn/layers.hpp"

namespace glyphsr::nn {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

class Adam {
public:
    Adam(ParamStore& store, AdamConfig config);

    // Returns the pre-clip global gradient norm.
    double step();
    long long steps_taken() const { return t_; }

    // Moment buffers, in store order, for checkpointing.
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_steps_taken(long long t) { t_ = t; }
    const AdamConfig& config() const { return config_; }

private:
    ParamStore& store_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

}  // namespace glyphsr::nn
