#include "glyphsr/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "glyphsr/errors.hpp"

namespace glyphsr::nn {

namespace {

using detail::make_result;
using NodePtr = std::shared_ptr<Node>;

bool wants(const NodePtr& n) { return n && n->requires_grad; }

void check(bool ok, const std::string& what) {
    if (!ok) throw ShapeMismatch(what);
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    check(t.defined() && t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                               (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined"));
}

template <typename T>
void im2col(const double* x, int c, int h, int w, int k, int pad, T* col) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const double* src = x + ci * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    T* dst = row + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sy) * w;
                    const int shift = kx - pad;
                    const int x0 = std::max(0, -shift), x1 = std::min(w, w - shift);
                    std::fill(dst, dst + std::max(0, x0), T(0));
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = static_cast<T>(srow[xx + shift]);
                    std::fill(dst + std::max(x0, x1), dst + w, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int pad, double* x) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                double* dst = x + ci * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(y) * w;
                    double* drow = dst + static_cast<std::size_t>(sy) * w;
                    const int shift = kx - pad;
                    const int x0 = std::max(0, -shift), x1 = std::min(w, w - shift);
                    for (int xx = x0; xx < x1; ++xx) drow[xx + shift] += src[xx];
                }
            }
        }
    }
}

template <typename F, typename G>
Tensor unary(const Tensor& x, F f, G df) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {&x}, [xn, df](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xn->value[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        for (const NodePtr& p : {an, bn}) {
            if (!wants(p)) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        if (wants(an)) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(bn)) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        if (wants(an)) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (wants(bn)) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor silu(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    const bool keep = grad_enabled() && x.requires_grad();
    auto sig = std::make_shared<std::vector<double>>(keep ? xv.size() : 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double sg = 1.0 / (1.0 + std::exp(-xv[i]));
        out[i] = xv[i] * sg;
        if (keep) (*sig)[i] = sg;
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {&x}, [xn, sig](Node& self) {
        auto& g = xn->grad_buffer();
        const auto& v = xn->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sg = (*sig)[i];
            g[i] += self.grad[i] * sg * (1.0 + v[i] * (1.0 - sg));
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check(shape_numel(shape) == x.numel(), "reshape: size mismatch");
    NodePtr xn = x.node();
    return make_result(std::move(shape), x.values(), {&x}, [xn](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    NodePtr xn = x.node();
    return make_result({1}, {acc}, {&x}, [xn](Node& self) {
        auto& g = xn->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(w, 2, "linear weight");
    const int out_f = w.dim(0), in_f = w.dim(1);
    check(x.rank() >= 1 && x.shape().back() == in_f,
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const int rows = static_cast<int>(x.numel() / in_f);
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    std::vector<double> out(static_cast<std::size_t>(rows) * out_f);
    gemm(false, true, rows, out_f, in_f, x.values().data(), w.values().data(), out.data(), false);
    if (b.defined()) {
        check(b.numel() == static_cast<std::size_t>(out_f), "linear: bias size");
        for (int r = 0; r < rows; ++r) {
            for (int o = 0; o < out_f; ++o) out[static_cast<std::size_t>(r) * out_f + o] += b.values()[o];
        }
    }
    NodePtr xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    return make_result(std::move(out_shape), std::move(out), {&x, &w, &b}, [=](Node& self) {
        const double* dy = self.grad.data();
        if (wants(xn)) gemm(false, false, rows, in_f, out_f, dy, wn->value.data(), xn->grad_buffer().data(), true);
        if (wants(wn)) gemm(true, false, out_f, in_f, rows, dy, xn->value.data(), wn->grad_buffer().data(), true);
        if (wants(bn)) {
            auto& gb = bn->grad_buffer();
            for (int r = 0; r < rows; ++r) {
                for (int o = 0; o < out_f; ++o) gb[o] += dy[static_cast<std::size_t>(r) * out_f + o];
            }
        }
    });
}

namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Single-precision conv: im2col straight into float buffers, cached for the weight gradient.
Tensor conv2d_float(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2);
    const int hw = h * wd;
    const int ckk = cin * k * k;
    const RowMajorF wf = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                             w.values().data(), cout, ckk)
                             .cast<float>();
    const bool keep_cols = grad_enabled() && w.requires_grad();
    // One buffer per sample keeps each allocation under the mmap threshold.
    auto cols = std::make_shared<std::vector<std::vector<float>>>(keep_cols ? batch : 1);
    for (auto& c : *cols) c.resize(static_cast<std::size_t>(ckk) * hw);

    std::vector<double> out(static_cast<std::size_t>(batch) * cout * hw);
    RowMajorF of(cout, hw);
    for (int n = 0; n < batch; ++n) {
        const double* xb = x.values().data() + static_cast<std::size_t>(n) * cin * hw;
        float* col = (*cols)[keep_cols ? n : 0].data();
        im2col<float>(xb, cin, h, wd, k, pad, col);
        of.noalias() = wf * Eigen::Map<const RowMajorF>(col, ckk, hw);
        double* ob = out.data() + static_cast<std::size_t>(n) * cout * hw;
        for (int o = 0; o < cout; ++o) {
            const double bias = b.defined() ? b.values()[o] : 0.0;
            const float* src = of.data() + static_cast<std::size_t>(o) * hw;
            double* row = ob + static_cast<std::size_t>(o) * hw;
            for (int i = 0; i < hw; ++i) row[i] = src[i] + bias;
        }
    }
    if (!keep_cols) cols.reset();
    NodePtr xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    return make_result({batch, cout, h, wd}, std::move(out), {&x, &w, &b}, [=](Node& self) {
        RowMajorF dyf(cout, hw), dcol;
        RowMajorF dwf = RowMajorF::Zero(cout, ckk);
        for (int n = 0; n < batch; ++n) {
            const double* dy = self.grad.data() + static_cast<std::size_t>(n) * cout * hw;
            for (std::size_t i = 0; i < static_cast<std::size_t>(cout) * hw; ++i) dyf.data()[i] = static_cast<float>(dy[i]);
            if (wants(wn)) {
                const float* col = (*cols)[n].data();
                dwf.noalias() += dyf * Eigen::Map<const RowMajorF>(col, ckk, hw).transpose();
            }
            if (wants(xn)) {
                dcol.noalias() = wf.transpose() * dyf;
                col2im<float>(dcol.data(), cin, h, wd, k, pad,
                              xn->grad_buffer().data() + static_cast<std::size_t>(n) * cin * hw);
            }
            if (wants(bn)) {
                auto& gb = bn->grad_buffer();
                for (int o = 0; o < cout; ++o) {
                    const double* row = dy + static_cast<std::size_t>(o) * hw;
                    double acc = 0.0;
                    for (int i = 0; i < hw; ++i) acc += row[i];
                    gb[o] += acc;
                }
            }
        }
        if (wants(wn)) {
            auto& gw = wn->grad_buffer();
            for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dwf.data()[i];
        }
    });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2);
    check(w.dim(1) == cin && w.dim(3) == k, "conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    check(2 * pad == k - 1, "conv2d: only 'same' padding is supported");
    if (matmul_precision() == MatmulPrecision::Float) return conv2d_float(x, w, b, pad);
    const int hw = h * wd;
    const int ckk = cin * k * k;
    const bool direct = k == 1;

    std::vector<double> out(static_cast<std::size_t>(batch) * cout * hw);
    std::vector<double> col(direct ? 0 : static_cast<std::size_t>(ckk) * hw);
    for (int n = 0; n < batch; ++n) {
        const double* xb = x.values().data() + static_cast<std::size_t>(n) * cin * hw;
        const double* src = xb;
        if (!direct) {
            im2col(xb, cin, h, wd, k, pad, col.data());
            src = col.data();
        }
        double* ob = out.data() + static_cast<std::size_t>(n) * cout * hw;
        gemm(false, false, cout, hw, ckk, w.values().data(), src, ob, false);
        if (b.defined()) {
            for (int o = 0; o < cout; ++o) {
                const double bias = b.values()[o];
                double* row = ob + static_cast<std::size_t>(o) * hw;
                for (int i = 0; i < hw; ++i) row[i] += bias;
            }
        }
    }
    NodePtr xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    return make_result({batch, cout, h, wd}, std::move(out), {&x, &w, &b}, [=](Node& self) {
        std::vector<double> colb(direct ? 0 : static_cast<std::size_t>(ckk) * hw);
        std::vector<double> dcol(direct || !wants(xn) ? 0 : static_cast<std::size_t>(ckk) * hw);
        for (int n = 0; n < batch; ++n) {
            const double* dy = self.grad.data() + static_cast<std::size_t>(n) * cout * hw;
            const double* xb = xn->value.data() + static_cast<std::size_t>(n) * cin * hw;
            if (wants(wn)) {
                const double* src = xb;
                if (!direct) {
                    im2col(xb, cin, h, wd, k, pad, colb.data());
                    src = colb.data();
                }
                gemm(false, true, cout, ckk, hw, dy, src, wn->grad_buffer().data(), true);
            }
            if (wants(xn)) {
                double* dxb = xn->grad_buffer().data() + static_cast<std::size_t>(n) * cin * hw;
                if (direct) {
                    gemm(true, false, cin, hw, cout, wn->value.data(), dy, dxb, true);
                } else {
                    gemm(true, false, ckk, hw, cout, wn->value.data(), dy, dcol.data(), false);
                    col2im(dcol.data(), cin, h, wd, k, pad, dxb);
                }
            }
            if (wants(bn)) {
                auto& gb = bn->grad_buffer();
                for (int o = 0; o < cout; ++o) {
                    const double* row = dy + static_cast<std::size_t>(o) * hw;
                    double acc = 0.0;
                    for (int i = 0; i < hw; ++i) acc += row[i];
                    gb[o] += acc;
                }
            }
        }
    });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    check(x.rank() >= 2, "group_norm: rank");
    const int batch = x.dim(0), channels = x.dim(1);
    check(groups > 0 && channels % groups == 0, "group_norm: channels not divisible by groups");
    check(gamma.numel() == static_cast<std::size_t>(channels) && beta.numel() == gamma.numel(), "group_norm: affine size");
    const std::size_t spatial = x.numel() / (static_cast<std::size_t>(batch) * channels);
    const int cpg = channels / groups;
    const std::size_t group_size = spatial * cpg;

    std::vector<double> xhat(x.numel()), out(x.numel());
    std::vector<double> inv_std(static_cast<std::size_t>(batch) * groups);
    const auto& xv = x.values();
    for (int n = 0; n < batch; ++n) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + g * cpg) * spatial;
            double mean = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) mean += xv[base + i];
            mean /= static_cast<double>(group_size);
            double var = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
            var /= static_cast<double>(group_size);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(n) * groups + g] = inv;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                const double ga = gamma.values()[ch], be = beta.values()[ch];
                for (std::size_t i = 0; i < spatial; ++i) {
                    const std::size_t idx = base + c * spatial + i;
                    xhat[idx] = (xv[idx] - mean) * inv;
                    out[idx] = xhat[idx] * ga + be;
                }
            }
        }
    }
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& dy = self.grad;
                           for (int n = 0; n < batch; ++n) {
                               for (int g = 0; g < groups; ++g) {
                                   const std::size_t base = (static_cast<std::size_t>(n) * channels + g * cpg) * spatial;
                                   double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                                   for (int c = 0; c < cpg; ++c) {
                                       const int ch = g * cpg + c;
                                       const double ga = gn->value[ch];
                                       double dga = 0.0, dbe = 0.0;
                                       for (std::size_t i = 0; i < spatial; ++i) {
                                           const std::size_t idx = base + c * spatial + i;
                                           const double d = dy[idx] * ga;
                                           sum_dxhat += d;
                                           sum_dxhat_xhat += d * xhat[idx];
                                           dga += dy[idx] * xhat[idx];
                                           dbe += dy[idx];
                                       }
                                       if (wants(gn)) gn->grad_buffer()[ch] += dga;
                                       if (wants(bn)) bn->grad_buffer()[ch] += dbe;
                                   }
                                   if (!wants(xn)) continue;
                                   auto& dx = xn->grad_buffer();
                                   const double inv = inv_std[static_cast<std::size_t>(n) * groups + g];
                                   const double m = static_cast<double>(group_size);
                                   for (int c = 0; c < cpg; ++c) {
                                       const double ga = gn->value[g * cpg + c];
                                       for (std::size_t i = 0; i < spatial; ++i) {
                                           const std::size_t idx = base + c * spatial + i;
                                           const double d = dy[idx] * ga;
                                           dx[idx] += inv / m * (m * d - sum_dxhat - xhat[idx] * sum_dxhat_xhat);
                                       }
                                   }
                               }
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int d = x.shape().back();
    check(gamma.numel() == static_cast<std::size_t>(d) && beta.numel() == gamma.numel(), "layer_norm: affine size");
    const std::size_t rows = x.numel() / d;
    std::vector<double> xhat(x.numel()), out(x.numel()), inv_std(rows);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += row[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (int i = 0; i < d; ++i) {
            xhat[r * d + i] = (row[i] - mean) * inv;
            out[r * d + i] = xhat[r * d + i] * gamma.values()[i] + beta.values()[i];
        }
    }
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& dy = self.grad;
                           for (std::size_t r = 0; r < rows; ++r) {
                               double sum_d = 0.0, sum_dx = 0.0;
                               for (int i = 0; i < d; ++i) {
                                   const std::size_t idx = r * d + i;
                                   const double di = dy[idx] * gn->value[i];
                                   sum_d += di;
                                   sum_dx += di * xhat[idx];
                                   if (wants(gn)) gn->grad_buffer()[i] += dy[idx] * xhat[idx];
                                   if (wants(bn)) bn->grad_buffer()[i] += dy[idx];
                               }
                               if (!wants(xn)) continue;
                               auto& dx = xn->grad_buffer();
                               for (int i = 0; i < d; ++i) {
                                   const std::size_t idx = r * d + i;
                                   const double di = dy[idx] * gn->value[i];
                                   dx[idx] += inv_std[r] / d * (d * di - sum_d - xhat[idx] * sum_dx);
                               }
                           }
                       });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& v) {
    require_rank(x, 4, "add_channel_bias");
    const int batch = x.dim(0), channels = x.dim(1);
    check(v.numel() == static_cast<std::size_t>(batch) * channels, "add_channel_bias: bias shape");
    const std::size_t hw = x.numel() / (static_cast<std::size_t>(batch) * channels);
    std::vector<double> out(x.values());
    for (int bc = 0; bc < batch * channels; ++bc) {
        const double add_v = v.values()[bc];
        for (std::size_t i = 0; i < hw; ++i) out[bc * hw + i] += add_v;
    }
    NodePtr xn = x.node(), vn = v.node();
    return make_result(x.shape(), std::move(out), {&x, &v}, [=](Node& self) {
        if (wants(xn)) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(vn)) {
            auto& g = vn->grad_buffer();
            for (int bc = 0; bc < batch * channels; ++bc) {
                double acc = 0.0;
                for (std::size_t i = 0; i < hw; ++i) acc += self.grad[bc * hw + i];
                g[bc] += acc;
            }
        }
    });
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& factors) {
    check(!factors.empty() && x.numel() % factors.size() == 0, "scale_rows: row count");
    const std::size_t len = x.numel() / factors.size();
    std::vector<double> out(x.values());
    for (std::size_t r = 0; r < factors.size(); ++r) {
        for (std::size_t i = 0; i < len; ++i) out[r * len + i] *= factors[r];
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < factors.size(); ++r) {
            for (std::size_t i = 0; i < len; ++i) g[r * len + i] += self.grad[r * len + i] * factors[r];
        }
    });
}

Tensor add_scaled_vector(const Tensor& x, const Tensor& v, const std::vector<double>& coeff) {
    require_rank(x, 2, "add_scaled_vector");
    const int rows = x.dim(0), d = x.dim(1);
    check(v.numel() == static_cast<std::size_t>(d) && coeff.size() == static_cast<std::size_t>(rows),
          "add_scaled_vector: sizes");
    std::vector<double> out(x.values());
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(r) * d + i] += coeff[r] * v.values()[i];
    }
    NodePtr xn = x.node(), vn = v.node();
    return make_result(x.shape(), std::move(out), {&x, &v}, [=](Node& self) {
        if (wants(xn)) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(vn)) {
            auto& g = vn->grad_buffer();
            for (int r = 0; r < rows; ++r) {
                for (int i = 0; i < d; ++i) g[i] += coeff[r] * self.grad[static_cast<std::size_t>(r) * d + i];
            }
        }
    });
}

Tensor add_constant(const Tensor& x, const std::vector<double>& c) {
    const std::size_t len = c.size();
    check(len > 0 && x.numel() == len * static_cast<std::size_t>(x.dim(0)), "add_constant: size");
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % len];
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {&x}, [xn](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    check(b.dim(0) == batch && b.dim(2) == h && b.dim(3) == w,
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(batch) * (ca + cb) * hw);
    for (int n = 0; n < batch; ++n) {
        std::copy_n(a.values().data() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
        std::copy_n(b.values().data() + n * cb * hw, cb * hw, out.data() + (n * (ca + cb) + ca) * hw);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result({batch, ca + cb, h, w}, std::move(out), {&a, &b}, [=](Node& self) {
        for (int n = 0; n < batch; ++n) {
            if (wants(an)) {
                auto& g = an->grad_buffer();
                for (std::size_t i = 0; i < ca * hw; ++i) g[n * ca * hw + i] += self.grad[n * (ca + cb) * hw + i];
            }
            if (wants(bn)) {
                auto& g = bn->grad_buffer();
                for (std::size_t i = 0; i < cb * hw; ++i) {
                    g[n * cb * hw + i] += self.grad[(n * (ca + cb) + ca) * hw + i];
                }
            }
        }
    });
}

Tensor avg_pool2d(const Tensor& x, int f) {
    require_rank(x, 4, "avg_pool2d");
    const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    check(f >= 1 && h % f == 0 && w % f == 0, "avg_pool2d: " + shape_str(x.shape()) + " not divisible by " +
                                                   std::to_string(f));
    const int oh = h / f, ow = w / f;
    const double inv = 1.0 / (f * f);
    std::vector<double> out(static_cast<std::size_t>(bc) * oh * ow, 0.0);
    const auto& xv = x.values();
    for (int p = 0; p < bc; ++p) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                out[(static_cast<std::size_t>(p) * oh + y / f) * ow + xx / f] +=
                    xv[(static_cast<std::size_t>(p) * h + y) * w + xx] * inv;
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (int p = 0; p < bc; ++p) {
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    g[(static_cast<std::size_t>(p) * h + y) * w + xx] +=
                        self.grad[(static_cast<std::size_t>(p) * oh + y / f) * ow + xx / f] * inv;
                }
            }
        }
    });
}

Tensor upsample_nearest(const Tensor& x, int f) {
    require_rank(x, 4, "upsample_nearest");
    const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h * f, ow = w * f;
    std::vector<double> out(static_cast<std::size_t>(bc) * oh * ow);
    const auto& xv = x.values();
    for (int p = 0; p < bc; ++p) {
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                out[(static_cast<std::size_t>(p) * oh + y) * ow + xx] = xv[(static_cast<std::size_t>(p) * h + y / f) * w + xx / f];
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (int p = 0; p < bc; ++p) {
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    g[(static_cast<std::size_t>(p) * h + y / f) * w + xx / f] +=
                        self.grad[(static_cast<std::size_t>(p) * oh + y) * ow + xx];
                }
            }
        }
    });
}

Tensor to_tokens(const Tensor& x) {
    require_rank(x, 4, "to_tokens");
    const int batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    for (int n = 0; n < batch; ++n) {
        for (int ci = 0; ci < c; ++ci) {
            for (int i = 0; i < hw; ++i) {
                out[(static_cast<std::size_t>(n) * hw + i) * c + ci] = x.values()[(static_cast<std::size_t>(n) * c + ci) * hw + i];
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({batch, hw, c}, std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (int n = 0; n < batch; ++n) {
            for (int ci = 0; ci < c; ++ci) {
                for (int i = 0; i < hw; ++i) {
                    g[(static_cast<std::size_t>(n) * c + ci) * hw + i] += self.grad[(static_cast<std::size_t>(n) * hw + i) * c + ci];
                }
            }
        }
    });
}

Tensor from_tokens(const Tensor& x, int height, int width) {
    require_rank(x, 3, "from_tokens");
    const int batch = x.dim(0), hw = x.dim(1), c = x.dim(2);
    check(hw == height * width, "from_tokens: token count does not match spatial size");
    std::vector<double> out(x.numel());
    for (int n = 0; n < batch; ++n) {
        for (int ci = 0; ci < c; ++ci) {
            for (int i = 0; i < hw; ++i) {
                out[(static_cast<std::size_t>(n) * c + ci) * hw + i] = x.values()[(static_cast<std::size_t>(n) * hw + i) * c + ci];
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({batch, c, height, width}, std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (int n = 0; n < batch; ++n) {
            for (int ci = 0; ci < c; ++ci) {
                for (int i = 0; i < hw; ++i) {
                    g[(static_cast<std::size_t>(n) * hw + i) * c + ci] += self.grad[(static_cast<std::size_t>(n) * c + ci) * hw + i];
                }
            }
        }
    });
}

Tensor pad_to(const Tensor& x, int height, int width) {
    require_rank(x, 4, "pad_to");
    const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == height && w == width) return x;
    std::vector<double> out(static_cast<std::size_t>(bc) * height * width, 0.0);
    const int ch = std::min(h, height), cw = std::min(w, width);
    for (int p = 0; p < bc; ++p) {
        for (int y = 0; y < ch; ++y) {
            for (int xx = 0; xx < cw; ++xx) {
                out[(static_cast<std::size_t>(p) * height + y) * width + xx] = x.values()[(static_cast<std::size_t>(p) * h + y) * w + xx];
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({x.dim(0), x.dim(1), height, width}, std::move(out), {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (int p = 0; p < bc; ++p) {
            for (int y = 0; y < ch; ++y) {
                for (int xx = 0; xx < cw; ++xx) {
                    g[(static_cast<std::size_t>(p) * h + y) * w + xx] += self.grad[(static_cast<std::size_t>(p) * height + y) * width + xx];
                }
            }
        }
    });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, Shape prefix) {
    require_rank(table, 2, "embedding");
    const int vocab = table.dim(0), d = table.dim(1);
    check(shape_numel(prefix) == ids.size(), "embedding: prefix does not match id count");
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && ids[i] < vocab, "embedding: id out of range");
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    prefix.push_back(d);
    NodePtr tn = table.node();
    return make_result(std::move(prefix), std::move(out), {&table}, [=](Node& self) {
        auto& g = tn->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const std::vector<std::uint8_t>& key_mask) {
    require_rank(q, 3, "attention q");
    require_rank(k, 3, "attention k");
    require_rank(v, 3, "attention v");
    const int batch = q.dim(0), lq = q.dim(1), d = q.dim(2), lk = k.dim(1);
    check(k.dim(0) == batch && v.dim(0) == batch && k.dim(2) == d && v.dim(2) == d && v.dim(1) == lk,
          "attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " + shape_str(v.shape()));
    check(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
    check(key_mask.empty() || key_mask.size() == static_cast<std::size_t>(batch) * lk, "attention: mask size");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> probs(static_cast<std::size_t>(batch) * heads * lq * lk, 0.0);
    std::vector<double> out(static_cast<std::size_t>(batch) * lq * d, 0.0);
    const auto& qv = q.values();
    const auto& kv = k.values();
    const auto& vv = v.values();
    std::vector<double> row(lk);
    for (int n = 0; n < batch; ++n) {
        for (int hh = 0; hh < heads; ++hh) {
            for (int i = 0; i < lq; ++i) {
                const double* qi = qv.data() + (static_cast<std::size_t>(n) * lq + i) * d + hh * dh;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < lk; ++j) {
                    if (!key_mask.empty() && !key_mask[static_cast<std::size_t>(n) * lk + j]) {
                        row[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* kj = kv.data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                    double s = 0.0;
                    for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
                    row[j] = s * sc;
                    mx = std::max(mx, row[j]);
                }
                if (mx == -std::numeric_limits<double>::infinity()) continue;
                double z = 0.0;
                for (int j = 0; j < lk; ++j) {
                    row[j] = std::isinf(row[j]) ? 0.0 : std::exp(row[j] - mx);
                    z += row[j];
                }
                double* p = probs.data() + ((static_cast<std::size_t>(n) * heads + hh) * lq + i) * lk;
                double* oi = out.data() + (static_cast<std::size_t>(n) * lq + i) * d + hh * dh;
                for (int j = 0; j < lk; ++j) {
                    p[j] = row[j] / z;
                    if (p[j] == 0.0) continue;
                    const double* vj = vv.data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                    for (int e = 0; e < dh; ++e) oi[e] += p[j] * vj[e];
                }
            }
        }
    }
    NodePtr qn = q.node(), kn = k.node(), vn = v.node();
    return make_result(q.shape(), std::move(out), {&q, &k, &v}, [=, probs = std::move(probs)](Node& self) {
        const auto& dy = self.grad;
        std::vector<double> dp(lk);
        for (int n = 0; n < batch; ++n) {
            for (int hh = 0; hh < heads; ++hh) {
                for (int i = 0; i < lq; ++i) {
                    const double* p = probs.data() + ((static_cast<std::size_t>(n) * heads + hh) * lq + i) * lk;
                    const double* doi = dy.data() + (static_cast<std::size_t>(n) * lq + i) * d + hh * dh;
                    double dot = 0.0;
                    for (int j = 0; j < lk; ++j) {
                        const double* vj = vn->value.data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                        double s = 0.0;
                        for (int e = 0; e < dh; ++e) s += doi[e] * vj[e];
                        dp[j] = s;
                        dot += s * p[j];
                        if (wants(vn) && p[j] != 0.0) {
                            double* gv = vn->grad_buffer().data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                            for (int e = 0; e < dh; ++e) gv[e] += p[j] * doi[e];
                        }
                    }
                    const double* qi = qn->value.data() + (static_cast<std::size_t>(n) * lq + i) * d + hh * dh;
                    double* gq = wants(qn) ? qn->grad_buffer().data() + (static_cast<std::size_t>(n) * lq + i) * d + hh * dh
                                           : nullptr;
                    for (int j = 0; j < lk; ++j) {
                        if (p[j] == 0.0) continue;
                        const double ds = p[j] * (dp[j] - dot) * sc;
                        const double* kj = kn->value.data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                        if (gq) {
                            for (int e = 0; e < dh; ++e) gq[e] += ds * kj[e];
                        }
                        if (wants(kn)) {
                            double* gk = kn->grad_buffer().data() + (static_cast<std::size_t>(n) * lk + j) * d + hh * dh;
                            for (int e = 0; e < dh; ++e) gk[e] += ds * qi[e];
                        }
                    }
                }
            }
        }
    });
}

Tensor per_sample_mse(const Tensor& pred, const std::vector<double>& target) {
    check(pred.numel() == target.size(), "per_sample_mse: size");
    const int batch = pred.dim(0);
    const std::size_t len = pred.numel() / batch;
    std::vector<double> out(batch, 0.0);
    for (int n = 0; n < batch; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double dlt = pred.values()[n * len + i] - target[n * len + i];
            acc += dlt * dlt;
        }
        out[n] = acc / static_cast<double>(len);
    }
    NodePtr pn = pred.node();
    return make_result({batch}, std::move(out), {&pred}, [=](Node& self) {
        auto& g = pn->grad_buffer();
        for (int n = 0; n < batch; ++n) {
            const double s = 2.0 * self.grad[n] / static_cast<double>(len);
            for (std::size_t i = 0; i < len; ++i) g[n * len + i] += s * (pn->value[n * len + i] - target[n * len + i]);
        }
    });
}

Tensor sorted_mean(const Tensor& x) {
    std::vector<double> sorted(x.values());
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (double v : sorted) acc += v;
    const double n = static_cast<double>(sorted.size());
    NodePtr xn = x.node();
    return make_result({1}, {acc / n}, {&x}, [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (double& v : g) v += self.grad[0] / n;
    });
}

}  // namespace glyphsr::nn
