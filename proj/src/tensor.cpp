#include "c2ae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace c2ae {

using detail::TensorNode;

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape, std::vector<double> values,
                                      bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    if (shape_product(n->shape) != n->values.size())
        throw DimensionError("tensor data length does not match shape");
    return n;
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) throw DimensionError(std::string(what) + " must be a matrix");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
}

}  // namespace

std::string activation_name(const Activation& act) {
    switch (act.kind) {
        case Act::sigmoid: return "sigmoid";
        case Act::tanh: return "tanh";
        case Act::leaky_relu: return "leaky_relu";
    }
    throw ContractError("unknown activation kind");
}

Activation activation_from_name(const std::string& name, double slope) {
    if (name == "sigmoid") return {Act::sigmoid, slope};
    if (name == "tanh") return {Act::tanh, slope};
    if (name == "leaky_relu") return {Act::leaky_relu, slope};
    throw ContractError("unknown activation name: " + name);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> values,
                         bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const std::vector<std::size_t>& Tensor::shape() const {
    if (!node_) throw ContractError("empty tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

std::size_t Tensor::rows() const {
    require_matrix(*this, "tensor");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "tensor");
    return node_->shape[1];
}

std::span<const double> Tensor::values() const {
    if (!node_) throw ContractError("empty tensor");
    return node_->values;
}

std::span<double> Tensor::mutable_values() {
    if (!node_) throw ContractError("empty tensor");
    return node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
    if (!node_) throw ContractError("empty tensor");
    return node_->grad;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a single-element tensor");
    return node_->values[0];
}

Tensor Tensor::detach() const {
    if (!node_) throw ContractError("empty tensor");
    return from_data(node_->shape, node_->values, false);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_matrix(x, "affine input");
    require_matrix(w, "affine weight");
    if (b.shape().size() != 1) throw DimensionError("affine bias must be a vector");
    const std::size_t n = x.shape()[0], din = x.shape()[1];
    const std::size_t dout = w.shape()[1];
    if (w.shape()[0] != din) throw DimensionError("affine: input width does not match weight rows");
    if (b.shape()[0] != dout) throw DimensionError("affine: bias length does not match weight cols");

    std::vector<double> out(n * dout);
    const auto xv = x.values();
    const auto wv = w.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = out.data() + i * dout;
        for (std::size_t j = 0; j < dout; ++j) orow[j] = bv[j];
        const double* xrow = xv.data() + i * din;
        for (std::size_t t = 0; t < din; ++t) {
            const double xc = xrow[t];
            const double* wrow = wv.data() + t * dout;
            for (std::size_t j = 0; j < dout; ++j) orow[j] += xc * wrow[j];
        }
    }

    const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
    auto node = make_node({n, dout}, std::move(out), rg);
    if (rg) {
        node->parents = {x.node_ptr(), w.node_ptr(), b.node_ptr()};
        node->backprop = [n, din, dout](TensorNode& self) {
            TensorNode& xn = *self.parents[0];
            TensorNode& wn = *self.parents[1];
            TensorNode& bn = *self.parents[2];
            const double* g = self.grad.data();
            if (xn.requires_grad) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = g + i * dout;
                    double* xg = xn.grad.data() + i * din;
                    for (std::size_t j = 0; j < dout; ++j) {
                        const double gj = grow[j];
                        const double* wcol = wn.values.data() + j;
                        for (std::size_t t = 0; t < din; ++t) xg[t] += gj * wcol[t * dout];
                    }
                }
            }
            if (wn.requires_grad) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double* xrow = xn.values.data() + i * din;
                    const double* grow = g + i * dout;
                    for (std::size_t t = 0; t < din; ++t) {
                        const double xc = xrow[t];
                        double* wg = wn.grad.data() + t * dout;
                        for (std::size_t j = 0; j < dout; ++j) wg[j] += xc * grow[j];
                    }
                }
            }
            if (bn.requires_grad) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = g + i * dout;
                    for (std::size_t j = 0; j < dout; ++j) bn.grad[j] += grow[j];
                }
            }
        };
    }
    return Tensor(node);
}

Tensor activation(const Tensor& x, const Activation& act) {
    std::vector<double> out(x.values().begin(), x.values().end());
    switch (act.kind) {
        case Act::sigmoid:
            for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case Act::tanh:
            for (double& v : out) v = std::tanh(v);
            break;
        case Act::leaky_relu:
            for (double& v : out) v = v > 0.0 ? v : act.slope * v;
            break;
    }
    auto node = make_node(x.shape(), std::move(out), x.requires_grad());
    if (node->requires_grad) {
        node->parents = {x.node_ptr()};
        const Activation a = act;
        node->backprop = [a](TensorNode& self) {
            TensorNode& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            for (std::size_t i = 0; i < self.size(); ++i) {
                double d = 0.0;
                switch (a.kind) {
                    case Act::sigmoid: {
                        const double s = self.values[i];
                        d = s * (1.0 - s);
                        break;
                    }
                    case Act::tanh: {
                        const double t = self.values[i];
                        d = 1.0 - t * t;
                        break;
                    }
                    case Act::leaky_relu:
                        d = xn.values[i] > 0.0 ? 1.0 : a.slope;
                        break;
                }
                xn.grad[i] += d * self.grad[i];
            }
        };
    }
    return Tensor(node);
}

namespace {

// Row-wise softmax with max subtraction.
void softmax_rows(std::span<const double> in, std::size_t n, std::size_t k, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * k;
        double* orow = out + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < k; ++j) orow[j] /= denom;
    }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    require_matrix(logits, "softmax input");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    std::vector<double> out(n * k);
    softmax_rows(logits.values(), n, k, out.data());
    auto node = make_node({n, k}, std::move(out), logits.requires_grad());
    if (node->requires_grad) {
        node->parents = {logits.node_ptr()};
        node->backprop = [n, k](TensorNode& self) {
            TensorNode& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            for (std::size_t i = 0; i < n; ++i) {
                const double* s = self.values.data() + i * k;
                const double* g = self.grad.data() + i * k;
                double dot = 0.0;
                for (std::size_t j = 0; j < k; ++j) dot += g[j] * s[j];
                double* xg = xn.grad.data() + i * k;
                for (std::size_t j = 0; j < k; ++j) xg[j] += s[j] * (g[j] - dot);
            }
        };
    }
    return Tensor(node);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_matrix(logits, "cross-entropy logits");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != n) throw DimensionError("cross-entropy: one label per row required");
    if (n == 0) throw ContractError("cross-entropy: empty batch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw IndexError("cross-entropy: label out of range");

    std::vector<double> probs(n * k);
    softmax_rows(logits.values(), n, k, probs.data());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        loss -= std::log(probs[i * k + static_cast<std::size_t>(labels[i])]);
    loss /= static_cast<double>(n);

    auto node = make_node({1}, {loss}, logits.requires_grad());
    if (node->requires_grad) {
        node->parents = {logits.node_ptr()};
        std::vector<int> ys(labels.begin(), labels.end());
        node->backprop = [n, k, probs = std::move(probs), ys = std::move(ys)](TensorNode& self) {
            TensorNode& xn = *self.parents[0];
            if (!xn.requires_grad) return;
            const double g = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* p = probs.data() + i * k;
                double* xg = xn.grad.data() + i * k;
                for (std::size_t j = 0; j < k; ++j) {
                    const double onehot = (static_cast<std::size_t>(ys[i]) == j) ? 1.0 : 0.0;
                    xg[j] += g * (p[j] - onehot);
                }
            }
        };
    }
    return Tensor(node);
}

Tensor l1_reconstruction_loss(const Tensor& x, const Tensor& x_hat) {
    require_same_shape(x, x_hat, "l1_reconstruction_loss");
    require_matrix(x, "l1_reconstruction_loss input");
    const std::size_t n = x.shape()[0];
    double loss = 0.0;
    const auto a = x.values(), b = x_hat.values();
    for (std::size_t i = 0; i < a.size(); ++i) loss += std::abs(a[i] - b[i]);
    loss /= static_cast<double>(n);

    const bool rg = x.requires_grad() || x_hat.requires_grad();
    auto node = make_node({1}, {loss}, rg);
    if (rg) {
        node->parents = {x.node_ptr(), x_hat.node_ptr()};
        node->backprop = [n](TensorNode& self) {
            TensorNode& xn = *self.parents[0];
            TensorNode& hn = *self.parents[1];
            const double g = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < xn.size(); ++i) {
                const double d = xn.values[i] - hn.values[i];
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (xn.requires_grad) xn.grad[i] += g * s;
                if (hn.requires_grad) hn.grad[i] -= g * s;
            }
        };
    }
    return Tensor(node);
}

namespace {

template <typename Fwd, typename Bwd>
std::shared_ptr<TensorNode> binary_node(const Tensor& a, const Tensor& b, const char* name,
                                        Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    const bool rg = a.requires_grad() || b.requires_grad();
    auto node = make_node(a.shape(), std::move(out), rg);
    if (rg) {
        node->parents = {a.node_ptr(), b.node_ptr()};
        node->backprop = [bwd](TensorNode& self) {
            TensorNode& an = *self.parents[0];
            TensorNode& bn = *self.parents[1];
            for (std::size_t i = 0; i < self.size(); ++i) {
                const auto [da, db] = bwd(an.values[i], bn.values[i]);
                if (an.requires_grad) an.grad[i] += da * self.grad[i];
                if (bn.requires_grad) bn.grad[i] += db * self.grad[i];
            }
        };
    }
    return node;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return Tensor(binary_node(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return std::pair<double, double>{1.0, 1.0}; }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return Tensor(binary_node(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return std::pair<double, double>{1.0, -1.0}; }));
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    return Tensor(binary_node(
        a, b, "hadamard", [](double x, double y) { return x * y; },
        [](double x, double y) { return std::pair<double, double>{y, x}; }));
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= c;
    auto node = make_node(a.shape(), std::move(out), a.requires_grad());
    if (node->requires_grad) {
        node->parents = {a.node_ptr()};
        node->backprop = [c](TensorNode& self) {
            TensorNode& an = *self.parents[0];
            if (!an.requires_grad) return;
            for (std::size_t i = 0; i < self.size(); ++i) an.grad[i] += c * self.grad[i];
        };
    }
    return Tensor(node);
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto node = make_node({1}, {s}, a.requires_grad());
    if (node->requires_grad) {
        node->parents = {a.node_ptr()};
        node->backprop = [](TensorNode& self) {
            TensorNode& an = *self.parents[0];
            if (!an.requires_grad) return;
            for (std::size_t i = 0; i < an.size(); ++i) an.grad[i] += self.grad[0];
        };
    }
    return Tensor(node);
}

void backward(const Tensor& loss) {
    if (!loss.valid() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    TensorNode* root = loss.node();

    // Postorder over the tape.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Overwrite semantics: zero every reachable gradient before accumulating.
    for (TensorNode* n : order) {
        n->grad.assign(n->size(), 0.0);
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

std::vector<double> rowwise_l1_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "rowwise_l1_distance");
    require_matrix(a, "rowwise_l1_distance input");
    const std::size_t n = a.shape()[0], d = a.shape()[1];
    const auto av = a.values(), bv = b.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += std::abs(av[i * d + j] - bv[i * d + j]);
        out[i] = s;
    }
    return out;
}

AdamState make_adam(std::span<const Tensor> params, double lr) {
    std::size_t total = 0;
    for (const Tensor& p : params) total += p.size();
    AdamState st;
    st.lr = lr;
    st.m.assign(total, 0.0);
    st.v.assign(total, 0.0);
    return st;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
    std::size_t total = 0;
    for (const Tensor& p : params) total += p.size();
    if (state.m.size() != total || state.v.size() != total)
        throw ContractError("adam_step: state length does not match parameter list");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    std::size_t off = 0;
    for (Tensor& p : params) {
        auto vals = p.mutable_values();
        const auto g = p.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            if (!std::isfinite(gi)) throw NumericError("adam_step: non-finite gradient");
            double& m = state.m[off + i];
            double& v = state.v[off + i];
            m = state.beta1 * m + (1.0 - state.beta1) * gi;
            v = state.beta2 * v + (1.0 - state.beta2) * gi * gi;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            vals[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        off += vals.size();
    }
}

}  // namespace c2ae
