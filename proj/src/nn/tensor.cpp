#include "glyphsr/nn/tensor.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace glyphsr::nn {

namespace {

#if defined(__GLIBC__)
// Activation buffers are large and short-lived. Keeping them on the heap instead of
// fresh mmap regions avoids page-faulting every step.
[[maybe_unused]] const bool g_malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc's ceiling on 64-bit
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

}  // namespace

namespace {

thread_local bool g_grad_enabled = true;
thread_local MatmulPrecision g_precision = MatmulPrecision::Double;

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void gemm_impl(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    Eigen::Map<const RowMajor<T>> A(a, ta ? k : m, ta ? m : k);
    Eigen::Map<const RowMajor<T>> B(b, tb ? n : k, tb ? k : n);
    Eigen::Map<RowMajor<T>> C(c, m, n);
    auto run = [&](const auto& lhs, const auto& rhs) {
        if (accumulate) {
            C.noalias() += lhs * rhs;
        } else {
            C.noalias() = lhs * rhs;
        }
    };
    if (!ta && !tb) run(A, B);
    if (!ta && tb) run(A, B.transpose());
    if (ta && !tb) run(A.transpose(), B);
    if (ta && tb) run(A.transpose(), B.transpose());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) throw std::invalid_argument("tensor data does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item() on a non-scalar tensor");
    return node_->value[0];
}

Tensor Tensor::detach() const { return from_data(shape(), values(), false); }

void Tensor::backward() const {
    if (numel() != 1) throw std::logic_error("backward() needs a scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn) continue;
        if (!n->grad.empty()) n->backward_fn(*n);
        // Interior gradients and saved buffers are dead once propagated.
        if (n != node_.get()) {
            std::vector<double>().swap(n->grad);
            n->backward_fn = nullptr;
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

MatmulPrecision matmul_precision() { return g_precision; }
void set_matmul_precision(MatmulPrecision precision) { g_precision = precision; }

MatmulPrecisionGuard::MatmulPrecisionGuard(MatmulPrecision precision) : previous_(g_precision) {
    g_precision = precision;
}
MatmulPrecisionGuard::~MatmulPrecisionGuard() { g_precision = previous_; }

void gemm(bool ta, bool tb, int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
        return;
    }
    if (g_precision == MatmulPrecision::Double) {
        gemm_impl<double>(ta, tb, m, n, k, a, b, c, accumulate);
        return;
    }
    thread_local std::vector<float> fa, fb, fc;
    const std::size_t na = static_cast<std::size_t>(m) * k, nb = static_cast<std::size_t>(k) * n,
                      nc = static_cast<std::size_t>(m) * n;
    fa.resize(na);
    fb.resize(nb);
    fc.resize(nc);
    for (std::size_t i = 0; i < na; ++i) fa[i] = static_cast<float>(a[i]);
    for (std::size_t i = 0; i < nb; ++i) fb[i] = static_cast<float>(b[i]);
    gemm_impl<float>(ta, tb, m, n, k, fa.data(), fb.data(), fc.data(), false);
    if (accumulate) {
        for (std::size_t i = 0; i < nc; ++i) c[i] += fc[i];
    } else {
        for (std::size_t i = 0; i < nc; ++i) c[i] = fc[i];
    }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value, const std::vector<const Tensor*>& inputs,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const Tensor* t : inputs) {
            if (t && t->defined() && t->requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        for (const Tensor* t : inputs) {
            if (t && t->defined()) node->parents.push_back(t->node());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace glyphsr::nn
