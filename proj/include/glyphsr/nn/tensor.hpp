#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace glyphsr::nn {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Zero-filled on first use.
    std::vector<double>& grad_buffer();
};

// Reference-semantics handle over a graph node. Copies share storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& mutable_grad() { return node_->grad_buffer(); }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    // Reverse-mode sweep from a scalar.
    void backward() const;
    void zero_grad() { node_->grad.clear(); }
    // Same values, no graph history.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Storage is always double. Float mode runs the large matrix products in single
// precision, which roughly doubles throughput; gradient checks need Double.
enum class MatmulPrecision { Double, Float };

MatmulPrecision matmul_precision();
void set_matmul_precision(MatmulPrecision precision);

class MatmulPrecisionGuard {
public:
    explicit MatmulPrecisionGuard(MatmulPrecision precision);
    ~MatmulPrecisionGuard();
    MatmulPrecisionGuard(const MatmulPrecisionGuard&) = delete;
    MatmulPrecisionGuard& operator=(const MatmulPrecisionGuard&) = delete;

private:
    MatmulPrecision previous_;
};

// Row-major C (m x n) = op(A) * op(B), added into C when accumulate is set.
// op(A) is m x k; A is stored k x m when trans_a. Likewise for B.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);

namespace detail {

// Builds an op output. The graph edge is recorded only when gradients are enabled and
// some input requires them.
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<const Tensor*>& inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace glyphsr::nn
