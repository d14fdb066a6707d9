#include "glyphsr/nn/adam.hpp"

#include <cmath>

namespace glyphsr::nn {

Adam::Adam(ParamStore& store, AdamConfig config) : store_(store), config_(config) {
    for (const auto& p : store_.entries()) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

double Adam::step() {
    auto& params = store_.entries();
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        if (!t.requires_grad() || t.grad().empty()) continue;
        auto& w = t.values();
        const auto& g = t.grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * clip;
            m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * gj;
            v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * gj * gj;
            w[j] -= config_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + config_.eps);
        }
    }
    return norm;
}

}  // namespace glyphsr::nn
