#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hvat/common.hpp"
#include "hvat/flop_counter.hpp"

namespace hvat {

namespace detail {

// One node of the reverse-mode graph. Activations needed by the backward
// pass are saved eagerly inside the backward closure; nodes own their
// parents, so a node's inputs stay alive as long as the node does.
template <typename S>
struct Node {
    std::vector<size_t> shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, zero-filled
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // empty for leaves
    const char* op = "leaf";

    size_t size() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

inline size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

}  // namespace detail

/// Dense row-major tensor participating in a reverse-mode graph.
/// Copying a Tensor copies the handle, not the data.
template <typename S>
class Tensor {
    static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

public:
    using Scalar = S;
    using NodePtr = std::shared_ptr<detail::Node<S>>;

    Tensor() : node_(std::make_shared<detail::Node<S>>()) {}

    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<size_t> shape) { return full(std::move(shape), S(0)); }

    static Tensor full(std::vector<size_t> shape, S v) {
        validate_shape(shape);
        auto node = std::make_shared<detail::Node<S>>();
        node->value.assign(detail::shape_numel(shape), v);
        node->shape = std::move(shape);
        return Tensor(std::move(node));
    }

    static Tensor from_data(std::vector<size_t> shape, std::vector<S> data) {
        validate_shape(shape);
        if (detail::shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + format_shape(shape));
        }
        auto node = std::make_shared<detail::Node<S>>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        return Tensor(std::move(node));
    }

    static Tensor from_rows(const std::vector<std::vector<S>>& rows) {
        if (rows.empty()) throw ShapeError("from_rows: no rows");
        std::vector<S> data;
        data.reserve(rows.size() * rows[0].size());
        for (const auto& r : rows) {
            if (r.size() != rows[0].size()) throw ShapeError("from_rows: ragged rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return from_data({rows.size(), rows[0].size()}, std::move(data));
    }

    static Tensor scalar(S v) { return from_data({1}, {v}); }

    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t size() const { return node_->value.size(); }
    size_t dim(size_t i) const { return node_->shape.at(i); }

    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& mutable_value() { return node_->value; }
    S* data() { return node_->value.data(); }
    const S* data() const { return node_->value.data(); }

    S operator()(size_t i) const { return node_->value[i]; }
    S operator()(size_t i, size_t j) const { return node_->value[i * node_->shape[1] + j]; }
    S& at(size_t i) { return node_->value[i]; }
    S& at(size_t i, size_t j) { return node_->value[i * node_->shape[1] + j]; }

    S scalar_value() const {
        if (size() != 1) throw ContractError("scalar_value on tensor of shape " + format_shape(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        return *this;
    }

    /// Gradient buffer; materializes zeros when no backward pass touched it,
    /// so unused parameters report zero gradients rather than none.
    const std::vector<S>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<S>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

    Tensor& fill_uniform(Rng& rng, double lo, double hi) {
        for (S& v : node_->value) v = static_cast<S>(rng.uniform(lo, hi));
        return *this;
    }

    /// Detached copy of the values (leaf, no graph history).
    Tensor detached_copy() const {
        auto node = std::make_shared<detail::Node<S>>();
        node->shape = node_->shape;
        node->value = node_->value;
        return Tensor(std::move(node));
    }

    NodePtr node() const { return node_; }

private:
    static void validate_shape(const std::vector<size_t>& shape) {
        if (shape.empty()) throw ShapeError("empty shape");
        for (size_t d : shape) {
            if (d == 0) throw ShapeError("zero dimension in shape " + format_shape(shape));
        }
    }

    NodePtr node_;
};

namespace detail {

template <typename S>
std::shared_ptr<Node<S>> make_op_node(std::vector<size_t> shape,
                                      std::vector<std::shared_ptr<Node<S>>> parents,
                                      const char* op) {
    auto node = std::make_shared<Node<S>>();
    node->shape = std::move(shape);
    node->value.assign(shape_numel(node->shape), S(0));
    node->op = op;
    for (const auto& p : parents) {
        if (p->requires_grad) node->requires_grad = true;
    }
    node->parents = std::move(parents);
    return node;
}

template <typename S>
void debug_check_finite(const Node<S>& node) {
#if HVAT_DEBUG_CHECKS
    for (S v : node.value) {
        if (!std::isfinite(v)) {
            throw ContractError(std::string("non-finite value produced by op '") + node.op + "'");
        }
    }
#else
    (void)node;
#endif
}

// outer * axis * inner decomposition for axis-wise ops
inline void axis_split(const std::vector<size_t>& shape, size_t axis, size_t& outer, size_t& n,
                       size_t& inner) {
    outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= shape[i];
    n = shape[axis];
    inner = 1;
    for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

enum class BroadcastKind { none, row_vector, scalar };

// Shapes equal, or b is a row vector [D] / [1,D] against a [N,D], or b is a
// scalar [1]. These are the only patterns the transformer blocks need.
template <typename S>
BroadcastKind classify_broadcast(const Node<S>& a, const Node<S>& b, const char* op) {
    if (a.shape == b.shape) return BroadcastKind::none;
    if (b.size() == 1) return BroadcastKind::scalar;
    if (a.shape.size() == 2 &&
        ((b.shape.size() == 1 && b.shape[0] == a.shape[1]) ||
         (b.shape.size() == 2 && b.shape[0] == 1 && b.shape[1] == a.shape[1]))) {
        return BroadcastKind::row_vector;
    }
    throw ShapeError(std::string(op) + ": shapes not broadcastable: " + format_shape(a.shape) +
                     " vs " + format_shape(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// a: [..., p, q] (leading dims batched), b: [q, r]. Gradients: dA = dC*B^T,
/// dB = A^T*dC summed over leading batch dims.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() < 2 || bs.size() != 2 || as.back() != bs[0]) {
        throw ShapeError("matmul: incompatible shapes " + format_shape(as) + " x " +
                         format_shape(bs));
    }
    const size_t q = bs[0], r = bs[1];
    const size_t p = as[as.size() - 2];
    size_t batch = 1;
    for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

    std::vector<size_t> out_shape = as;
    out_shape.back() = r;
    auto node = detail::make_op_node<S>(out_shape, {a.node(), b.node()}, "matmul");

    const S* av = a.data();
    const S* bv = b.data();
    S* cv = node->value.data();
    for (size_t bi = 0; bi < batch; ++bi) {
        const S* ab = av + bi * p * q;
        S* cb = cv + bi * p * r;
        for (size_t i = 0; i < p; ++i) {
            for (size_t k = 0; k < q; ++k) {
                const S aik = ab[i * q + k];
                const S* brow = bv + k * r;
                S* crow = cb + i * r;
                for (size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
            }
        }
    }
    record_flops(2ull * batch * p * q * r);
    detail::debug_check_finite(*node);

    if (node->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        node->backward = [an, bn, batch, p, q, r](detail::Node<S>& self) {
            const S* dc = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                S* da = an->grad.data();
                const S* bv2 = bn->value.data();
                for (size_t bi = 0; bi < batch; ++bi) {
                    const S* dcb = dc + bi * p * r;
                    S* dab = da + bi * p * q;
                    for (size_t i = 0; i < p; ++i) {
                        for (size_t k = 0; k < q; ++k) {
                            S acc = 0;
                            const S* dcrow = dcb + i * r;
                            const S* brow = bv2 + k * r;
                            for (size_t j = 0; j < r; ++j) acc += dcrow[j] * brow[j];
                            dab[i * q + k] += acc;
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                S* db = bn->grad.data();
                const S* av2 = an->value.data();
                for (size_t bi = 0; bi < batch; ++bi) {
                    const S* ab = av2 + bi * p * q;
                    const S* dcb = dc + bi * p * r;
                    for (size_t i = 0; i < p; ++i) {
                        for (size_t k = 0; k < q; ++k) {
                            const S aik = ab[i * q + k];
                            const S* dcrow = dcb + i * r;
                            S* dbrow = db + k * r;
                            for (size_t j = 0; j < r; ++j) dbrow[j] += aik * dcrow[j];
                        }
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + format_shape(x.shape()));
    const size_t p = x.dim(0), q = x.dim(1);
    auto node = detail::make_op_node<S>({q, p}, {x.node()}, "transpose");
    const S* xv = x.data();
    S* yv = node->value.data();
    for (size_t i = 0; i < p; ++i)
        for (size_t j = 0; j < q; ++j) yv[j * p + i] = xv[i * q + j];
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, p, q](detail::Node<S>& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < p; ++i)
                for (size_t j = 0; j < q; ++j) xn->grad[i * q + j] += self.grad[j * p + i];
        };
    }
    return Tensor<S>(std::move(node));
}

namespace detail {

template <typename S, typename Fwd>
std::shared_ptr<Node<S>> binary_elementwise(const Tensor<S>& a, const Tensor<S>& b, const char* op,
                                            Fwd fwd) {
    const BroadcastKind kind = classify_broadcast(*a.node(), *b.node(), op);
    auto node = make_op_node<S>(a.shape(), {a.node(), b.node()}, op);
    const S* av = a.data();
    const S* bv = b.data();
    S* cv = node->value.data();
    const size_t n = node->size();
    switch (kind) {
        case BroadcastKind::none:
            for (size_t i = 0; i < n; ++i) cv[i] = fwd(av[i], bv[i]);
            break;
        case BroadcastKind::scalar:
            for (size_t i = 0; i < n; ++i) cv[i] = fwd(av[i], bv[0]);
            break;
        case BroadcastKind::row_vector: {
            const size_t cols = a.shape()[1];
            for (size_t i = 0; i < n; ++i) cv[i] = fwd(av[i], bv[i % cols]);
            break;
        }
    }
    record_flops(n);
    debug_check_finite(*node);
    return node;
}

}  // namespace detail

/// Elementwise sum; b may also be a row vector broadcast over the token axis
/// or a scalar.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    auto node = detail::binary_elementwise(a, b, "add", [](S x, S y) { return x + y; });
    if (node->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        const auto kind = detail::classify_broadcast(*an, *bn, "add");
        node->backward = [an, bn, kind](detail::Node<S>& self) {
            const size_t n = self.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                switch (kind) {
                    case detail::BroadcastKind::none:
                        for (size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i];
                        break;
                    case detail::BroadcastKind::scalar:
                        for (size_t i = 0; i < n; ++i) bn->grad[0] += self.grad[i];
                        break;
                    case detail::BroadcastKind::row_vector: {
                        const size_t cols = bn->size();
                        for (size_t i = 0; i < n; ++i) bn->grad[i % cols] += self.grad[i];
                        break;
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Elementwise product with the same broadcast rules as add.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    auto node = detail::binary_elementwise(a, b, "mul", [](S x, S y) { return x * y; });
    if (node->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        const auto kind = detail::classify_broadcast(*an, *bn, "mul");
        node->backward = [an, bn, kind](detail::Node<S>& self) {
            const size_t n = self.size();
            const S* av = an->value.data();
            const S* bv = bn->value.data();
            if (an->requires_grad) {
                an->ensure_grad();
                switch (kind) {
                    case detail::BroadcastKind::none:
                        for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bv[i];
                        break;
                    case detail::BroadcastKind::scalar:
                        for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bv[0];
                        break;
                    case detail::BroadcastKind::row_vector: {
                        const size_t cols = bn->size();
                        for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bv[i % cols];
                        break;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                switch (kind) {
                    case detail::BroadcastKind::none:
                        for (size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i] * av[i];
                        break;
                    case detail::BroadcastKind::scalar:
                        for (size_t i = 0; i < n; ++i) bn->grad[0] += self.grad[i] * av[i];
                        break;
                    case detail::BroadcastKind::row_vector: {
                        const size_t cols = bn->size();
                        for (size_t i = 0; i < n; ++i) bn->grad[i % cols] += self.grad[i] * av[i];
                        break;
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// x * c for a plain constant (no graph edge for c).
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    auto node = detail::make_op_node<S>(x.shape(), {x.node()}, "scale");
    const S* xv = x.data();
    S* yv = node->value.data();
    const size_t n = node->size();
    for (size_t i = 0; i < n; ++i) yv[i] = xv[i] * c;
    record_flops(n);
    detail::debug_check_finite(*node);
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, c](detail::Node<S>& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) xn->grad[i] += self.grad[i] * c;
        };
    }
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    auto node = detail::make_op_node<S>(x.shape(), {x.node()}, "relu");
    const S* xv = x.data();
    S* yv = node->value.data();
    const size_t n = node->size();
    for (size_t i = 0; i < n; ++i) yv[i] = xv[i] > S(0) ? xv[i] : S(0);
    record_flops(n);
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](detail::Node<S>& self) {
            xn->ensure_grad();
            const S* xv2 = xn->value.data();
            // subgradient 0 at the kink
            for (size_t i = 0; i < self.size(); ++i) {
                if (xv2[i] > S(0)) xn->grad[i] += self.grad[i];
            }
        };
    }
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto node = detail::make_op_node<S>(x.shape(), {x.node()}, "sigmoid");
    const S* xv = x.data();
    S* yv = node->value.data();
    const size_t n = node->size();
    for (size_t i = 0; i < n; ++i) yv[i] = S(1) / (S(1) + std::exp(-xv[i]));
    record_flops(n);
    detail::debug_check_finite(*node);
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](detail::Node<S>& self) {
            xn->ensure_grad();
            const S* yv2 = self.value.data();
            for (size_t i = 0; i < self.size(); ++i) {
                xn->grad[i] += self.grad[i] * yv2[i] * (S(1) - yv2[i]);
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Exp-normalization along `axis` using the max-subtraction trick.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         format_shape(x.shape()));
    }
    auto node = detail::make_op_node<S>(x.shape(), {x.node()}, "softmax");
    size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    const S* xv = x.data();
    S* yv = node->value.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t i = 0; i < inner; ++i) {
            const size_t base = o * n * inner + i;
            S m = xv[base];
            for (size_t a = 1; a < n; ++a) m = std::max(m, xv[base + a * inner]);
            S sum = 0;
            for (size_t a = 0; a < n; ++a) {
                const S e = std::exp(xv[base + a * inner] - m);
                yv[base + a * inner] = e;
                sum += e;
            }
            for (size_t a = 0; a < n; ++a) yv[base + a * inner] /= sum;
        }
    }
    record_flops(3ull * node->size());
    detail::debug_check_finite(*node);
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, outer, n, inner](detail::Node<S>& self) {
            xn->ensure_grad();
            const S* yv2 = self.value.data();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t i = 0; i < inner; ++i) {
                    const size_t base = o * n * inner + i;
                    S dot = 0;
                    for (size_t a = 0; a < n; ++a) {
                        dot += yv2[base + a * inner] * self.grad[base + a * inner];
                    }
                    for (size_t a = 0; a < n; ++a) {
                        const size_t k = base + a * inner;
                        xn->grad[k] += yv2[k] * (self.grad[k] - dot);
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// log(softmax(x)) computed stably; the primitive the cross-entropy uses.
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x, size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("log_softmax: axis " + std::to_string(axis) + " out of range for " +
                         format_shape(x.shape()));
    }
    auto node = detail::make_op_node<S>(x.shape(), {x.node()}, "log_softmax");
    size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    const S* xv = x.data();
    S* yv = node->value.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t i = 0; i < inner; ++i) {
            const size_t base = o * n * inner + i;
            S m = xv[base];
            for (size_t a = 1; a < n; ++a) m = std::max(m, xv[base + a * inner]);
            S sum = 0;
            for (size_t a = 0; a < n; ++a) sum += std::exp(xv[base + a * inner] - m);
            const S lse = m + std::log(sum);
            for (size_t a = 0; a < n; ++a) yv[base + a * inner] = xv[base + a * inner] - lse;
        }
    }
    record_flops(3ull * node->size());
    detail::debug_check_finite(*node);
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, outer, n, inner](detail::Node<S>& self) {
            xn->ensure_grad();
            const S* yv2 = self.value.data();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t i = 0; i < inner; ++i) {
                    const size_t base = o * n * inner + i;
                    S gsum = 0;
                    for (size_t a = 0; a < n; ++a) gsum += self.grad[base + a * inner];
                    for (size_t a = 0; a < n; ++a) {
                        const size_t k = base + a * inner;
                        xn->grad[k] += self.grad[k] - std::exp(yv2[k]) * gsum;
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Concatenation along `axis`; backward slices the upstream gradient.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const size_t rank = parts[0].rank();
    if (axis >= rank) throw ShapeError("concat: axis out of range");
    std::vector<size_t> out_shape = parts[0].shape();
    size_t axis_total = 0;
    for (const auto& t : parts) {
        if (t.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (size_t d = 0; d < rank; ++d) {
            if (d != axis && t.shape()[d] != out_shape[d]) {
                throw ShapeError("concat: off-axis shape mismatch " + format_shape(t.shape()) +
                                 " vs " + format_shape(out_shape));
            }
        }
        axis_total += t.shape()[axis];
    }
    out_shape[axis] = axis_total;

    std::vector<typename Tensor<S>::NodePtr> parent_nodes;
    parent_nodes.reserve(parts.size());
    for (const auto& t : parts) parent_nodes.push_back(t.node());
    auto node = detail::make_op_node<S>(out_shape, parent_nodes, "concat");

    size_t outer, n_out, inner;
    detail::axis_split(out_shape, axis, outer, n_out, inner);
    S* yv = node->value.data();
    size_t axis_offset = 0;
    for (const auto& t : parts) {
        const size_t na = t.shape()[axis];
        const S* xv = t.data();
        for (size_t o = 0; o < outer; ++o) {
            std::copy(xv + o * na * inner, xv + (o + 1) * na * inner,
                      yv + (o * n_out + axis_offset) * inner);
        }
        axis_offset += na;
    }

    if (node->requires_grad) {
        std::vector<size_t> axis_dims;
        for (const auto& t : parts) axis_dims.push_back(t.shape()[axis]);
        node->backward = [parent_nodes, axis_dims, outer, n_out, inner](detail::Node<S>& self) {
            size_t offset = 0;
            for (size_t pi = 0; pi < parent_nodes.size(); ++pi) {
                const auto& pn = parent_nodes[pi];
                const size_t na = axis_dims[pi];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (size_t o = 0; o < outer; ++o) {
                        const S* src = self.grad.data() + (o * n_out + offset) * inner;
                        S* dst = pn->grad.data() + o * na * inner;
                        for (size_t k = 0; k < na * inner; ++k) dst[k] += src[k];
                    }
                }
                offset += na;
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Contiguous range [start, start+len) along `axis`; exact inverse of concat.
template <typename S>
Tensor<S> slice(const Tensor<S>& x, size_t axis, size_t start, size_t len) {
    if (axis >= x.rank()) throw ShapeError("slice: axis out of range");
    if (len == 0 || start + len > x.shape()[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         format_shape(x.shape()));
    }
    std::vector<size_t> out_shape = x.shape();
    out_shape[axis] = len;
    auto node = detail::make_op_node<S>(out_shape, {x.node()}, "slice");
    size_t outer, n_in, inner;
    detail::axis_split(x.shape(), axis, outer, n_in, inner);
    const S* xv = x.data();
    S* yv = node->value.data();
    for (size_t o = 0; o < outer; ++o) {
        std::copy(xv + (o * n_in + start) * inner, xv + (o * n_in + start + len) * inner,
                  yv + o * len * inner);
    }
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, outer, n_in, inner, start, len](detail::Node<S>& self) {
            xn->ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
                const S* src = self.grad.data() + o * len * inner;
                S* dst = xn->grad.data() + (o * n_in + start) * inner;
                for (size_t k = 0; k < len * inner; ++k) dst[k] += src[k];
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Arithmetic mean along `axis` (axis removed); backward spreads grad / n.
template <typename S>
Tensor<S> mean(const Tensor<S>& x, size_t axis) {
    if (axis >= x.rank()) throw ShapeError("mean: axis out of range");
    size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    std::vector<size_t> out_shape;
    for (size_t d = 0; d < x.rank(); ++d) {
        if (d != axis) out_shape.push_back(x.shape()[d]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    auto node = detail::make_op_node<S>(out_shape, {x.node()}, "mean");
    const S* xv = x.data();
    S* yv = node->value.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t i = 0; i < inner; ++i) {
            S acc = 0;
            for (size_t a = 0; a < n; ++a) acc += xv[(o * n + a) * inner + i];
            yv[o * inner + i] = acc / static_cast<S>(n);
        }
    }
    record_flops(x.size() + node->size());
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, outer, n, inner](detail::Node<S>& self) {
            xn->ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t i = 0; i < inner; ++i) {
                    const S g = self.grad[o * inner + i] / static_cast<S>(n);
                    for (size_t a = 0; a < n; ++a) xn->grad[(o * n + a) * inner + i] += g;
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Reduction of every element to a scalar of shape [1].
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    auto node = detail::make_op_node<S>({1}, {x.node()}, "sum");
    S acc = 0;
    for (S v : x.value()) acc += v;
    node->value[0] = acc;
    record_flops(x.size());
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](detail::Node<S>& self) {
            xn->ensure_grad();
            const S g = self.grad[0];
            for (S& d : xn->grad) d += g;
        };
    }
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<size_t> new_shape) {
    if (detail::shape_numel(new_shape) != x.size()) {
        throw ShapeError("reshape: " + format_shape(x.shape()) + " to " + format_shape(new_shape) +
                         " changes element count");
    }
    auto node = detail::make_op_node<S>(new_shape, {x.node()}, "reshape");
    node->value = x.value();
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](detail::Node<S>& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) xn->grad[i] += self.grad[i];
        };
    }
    return Tensor<S>(std::move(node));
}

/// Per-token normalization over the feature axis followed by affine gain/bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (x.rank() != 2) throw ShapeError("layer_norm: expected [N,D], got " + format_shape(x.shape()));
    const size_t n_rows = x.dim(0), d = x.dim(1);
    if (gain.shape() != std::vector<size_t>{d} || bias.shape() != std::vector<size_t>{d}) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    }
    if (!(eps > S(0))) throw ContractError("layer_norm: eps must be > 0");

    auto node = detail::make_op_node<S>(x.shape(), {x.node(), gain.node(), bias.node()}, "layer_norm");
    auto xhat = std::make_shared<std::vector<S>>(x.size());
    auto inv_std = std::make_shared<std::vector<S>>(n_rows);
    const S* xv = x.data();
    const S* gv = gain.data();
    const S* bv = bias.data();
    S* yv = node->value.data();
    for (size_t i = 0; i < n_rows; ++i) {
        const S* row = xv + i * d;
        S mu = 0;
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<S>(d);
        S var = 0;
        for (size_t j = 0; j < d; ++j) {
            const S c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (size_t j = 0; j < d; ++j) {
            const S xh = (row[j] - mu) * inv;
            (*xhat)[i * d + j] = xh;
            yv[i * d + j] = gv[j] * xh + bv[j];
        }
    }
    record_flops(7ull * node->size());
    detail::debug_check_finite(*node);
    if (node->requires_grad) {
        auto xn = x.node();
        auto gn = gain.node();
        auto bn = bias.node();
        node->backward = [xn, gn, bn, xhat, inv_std, n_rows, d](detail::Node<S>& self) {
            const S* gv2 = gn->value.data();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (size_t i = 0; i < n_rows; ++i) {
                const S* dy = self.grad.data() + i * d;
                const S* xh = xhat->data() + i * d;
                if (gn->requires_grad || bn->requires_grad) {
                    for (size_t j = 0; j < d; ++j) {
                        if (gn->requires_grad) gn->grad[j] += dy[j] * xh[j];
                        if (bn->requires_grad) bn->grad[j] += dy[j];
                    }
                }
                if (xn->requires_grad) {
                    S sum1 = 0, sum2 = 0;
                    for (size_t j = 0; j < d; ++j) {
                        const S dxh = dy[j] * gv2[j];
                        sum1 += dxh;
                        sum2 += dxh * xh[j];
                    }
                    const S inv = (*inv_std)[i];
                    for (size_t j = 0; j < d; ++j) {
                        const S dxh = dy[j] * gv2[j];
                        xn->grad[i * d + j] +=
                            inv * (dxh - sum1 / static_cast<S>(d) - xh[j] * sum2 / static_cast<S>(d));
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

/// Gathers rows of `table` by token id; backward scatters into those rows.
template <typename S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<int32_t>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_rows: table must be [V,D]");
    const size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw InputError("embedding_rows: empty id sequence");
    for (int32_t id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= v) {
            throw InputError("embedding_rows: token id " + std::to_string(id) +
                             " out of range [0," + std::to_string(v) + ")");
        }
    }
    auto node = detail::make_op_node<S>({ids.size(), d}, {table.node()}, "embedding_rows");
    const S* tv = table.data();
    S* yv = node->value.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(tv + static_cast<size_t>(ids[i]) * d, tv + (static_cast<size_t>(ids[i]) + 1) * d,
                  yv + i * d);
    }
    if (node->requires_grad) {
        auto tn = table.node();
        auto ids_copy = ids;
        node->backward = [tn, ids_copy, d](detail::Node<S>& self) {
            tn->ensure_grad();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                const S* src = self.grad.data() + i * d;
                S* dst = tn->grad.data() + static_cast<size_t>(ids_copy[i]) * d;
                for (size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
    return mul(a, b);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse-mode accumulation from a scalar loss. Builds the topological
/// ordering of the reachable graph and visits every node exactly once.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + format_shape(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    using Node = detail::Node<S>;
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // iterative post-order DFS; parents visited before the node itself
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) node->backward(*node);
    }
}

}  // namespace hvat
