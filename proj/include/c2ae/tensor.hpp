#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "c2ae/common.hpp"

namespace c2ae {

enum class Act { sigmoid, tanh, leaky_relu };

struct Activation {
    Act kind = Act::sigmoid;
    double slope = 0.01;  // leaky_relu only
};

std::string activation_name(const Activation& act);
Activation activation_from_name(const std::string& name, double slope);

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    // True when a gradient flows through this node (leaf parameter or any
    // ancestor is one). Interior nodes inherit the flag from their parents.
    bool requires_grad = false;
    std::vector<double> grad;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    std::size_t size() const { return values.size(); }
};

}  // namespace detail

// Dense row-major f64 tensor participating in a reverse-mode tape. Values are
// written once at creation; gradients are populated by backward(). The
// optimizer mutates parameter storage through mutable_values().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double v);

    bool valid() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t size() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    bool requires_grad() const;
    // Gradient of the last backward() pass; empty if none has touched this node.
    std::span<const double> grad() const;
    double item() const;

    // Value copy severed from the tape.
    Tensor detach() const;

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor affine(const Tensor&, const Tensor&, const Tensor&);
    friend Tensor activation(const Tensor&, const Activation&);
    friend Tensor softmax(const Tensor&);
    friend Tensor softmax_cross_entropy(const Tensor&, std::span<const int>);
    friend Tensor l1_reconstruction_loss(const Tensor&, const Tensor&);
    friend Tensor add(const Tensor&, const Tensor&);
    friend Tensor sub(const Tensor&, const Tensor&);
    friend Tensor hadamard(const Tensor&, const Tensor&);
    friend Tensor scale(const Tensor&, double);
    friend Tensor sum(const Tensor&);
};

// out[i][j] = sum_t x[i][t] * w[t][j] + b[j]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Element-wise sigmoid / tanh / leaky_relu.
Tensor activation(const Tensor& x, const Activation& act);

// Row-wise softmax of an [N x k] logit matrix.
Tensor softmax(const Tensor& logits);

// -(1/N) * sum_i log softmax(logits)[i][labels[i]]
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// (1/N) * sum_i sum_d |x[i][d] - x_hat[i][d]|
Tensor l1_reconstruction_loss(const Tensor& x, const Tensor& x_hat);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);

// Populates grad on every reachable requires_grad tensor. Each call overwrites
// the gradients of the nodes reachable from `loss`; it never accumulates
// across calls.
void backward(const Tensor& loss);

// Per-row L1 distance between two [N x D] tensors. Forward-only.
std::vector<double> rowwise_l1_distance(const Tensor& a, const Tensor& b);

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam(std::span<const Tensor> params, double lr);

// Bias-corrected Adam update over the concatenated parameter list, reading
// each parameter's gradient from its tape node. Parameters whose gradient was
// never populated are treated as zero-gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace c2ae
