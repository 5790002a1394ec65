// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense double-precision tensors with reverse-mode automatic
// differentiation over a recorded operation tape.
//
// Conventions:
//  - values are row-major; a rank-0 tensor (shape {}) is a scalar
//  - ops are free functions; passing a non-null Graph records the op
//  - gradients accumulate additively across uses of a tensor
//  - forward results are checked for finiteness; overflow raises
//    NumericError instead of propagating Inf/NaN
//
// Broadcasting is limited to three documented cases: identical shapes,
// one scalar operand, and row-broadcast of a vector [n] against a
// matrix [m,n]. Anything else raises DimensionError.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "regnet/errors.hpp"

namespace regnet::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;     // empty until connected to a graph
        bool requires_grad = false;   // leaf that wants its gradient kept
        bool connected = false;       // reaches a requires_grad leaf
    };

    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
        }
        if (values.size() != n) {
            throw DimensionError("tensor shape " + shape_str(shape) + " expects " + std::to_string(n) +
                                 " values, got " + std::to_string(values.size()));
        }
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
        node_->connected = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    bool is_scalar() const { return size() == 1; }

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    // Scalar extraction; contract: size() == 1.
    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool connected() const { return node_->connected; }
    bool has_grad() const { return !node_->grad.empty(); }

    std::vector<double>& grad() {
        if (node_->grad.empty()) throw ContractError("gradient requested but none was recorded");
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) throw ContractError("gradient requested but none was recorded");
        return node_->grad;
    }

    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    }

    // Deep copy of shape and values; gradient state is not copied.
    Tensor clone() const {
        return Tensor(node_->shape, node_->values, node_->requires_grad);
    }

    // Convenience row-major accessors.
    double& at(std::size_t i) { return node_->values[i]; }
    double at(std::size_t i) const { return node_->values[i]; }
    double& at(std::size_t i, std::size_t j) { return node_->values[i * node_->shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return node_->values[i * node_->shape[1] + j]; }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Ordered record of executed operations. Backward replays the tape in
// reverse, which is a valid topological order because every operand of
// an op was produced before the op executed. Single-actor: one graph is
// owned and mutated by exactly one execution context, and backward may
// run once.
class Graph {
public:
    std::size_t op_count() const { return ops_.size(); }

    void record(const char* name, std::function<void()> fn) {
        ops_.push_back(Op{name, std::move(fn)});
    }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // connected tensor. Contract: loss is scalar and was produced under
    // this graph; a graph can be walked once.
    void backward(const Tensor& loss) {
        if (consumed_) throw ContractError("backward called twice on the same graph");
        if (!loss.defined() || loss.size() != 1) {
            throw ContractError("backward requires a scalar loss");
        }
        if (!loss.has_grad()) {
            throw ContractError("backward on a loss that is not connected to any recorded operation");
        }
        consumed_ = true;
        loss.node()->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->fn();
    }

private:
    struct Op {
        const char* name;
        std::function<void()> fn;
    };
    std::vector<Op> ops_;
    bool consumed_ = false;
};

namespace detail {

inline void ensure_finite(const char* op, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(op) + " produced a non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

// Marks the output connected and allocates gradient buffers when the op
// is recorded and at least one input participates in differentiation.
inline bool prepare(Graph* g, Tensor& out, std::initializer_list<Tensor> inputs) {
    if (!g) return false;
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.connected();
    if (!any) return false;
    for (Tensor t : inputs) {
        if (t.connected()) t.ensure_grad();
    }
    out.node()->connected = true;
    out.ensure_grad();
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

// a: [m,k], b: [k,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " are incompatible");
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double s = av[i * k + kk];
                const double* brow = bv.data() + kk * n;
                double* orow = ov.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
            }
        }
    }
    detail::ensure_finite("matmul", out.values());
    if (detail::prepare(g, out, {a, b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g->record("matmul", [an, bn, on, m, k, n] {
            const auto& go = on->grad;
            if (an->connected) {
                auto& ga = an->grad;
                const auto& bv = bn->values;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* brow = bv.data() + kk * n;
                        const double* grow = go.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (bn->connected) {
                auto& gb = bn->grad;
                const auto& av = an->values;
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double s = av[i * k + kk];
                        const double* grow = go.data() + i * n;
                        double* gbrow = gb.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d

// Cross-correlation. input: [b,c,h,w], kernel: [f,c,kh,kw] with kh == kw
// odd; zero padding kh/2 keeps "same" geometry at stride 1 and halves it
// (rounding up) at stride 2. stride must be 1 or 2.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Graph* g = nullptr) {
    if (input.rank() != 4 || kernel.rank() != 4) {
        throw DimensionError("conv2d expects rank-4 input and kernel, got " + shape_str(input.shape()) +
                             " and " + shape_str(kernel.shape()));
    }
    if (input.shape()[1] != kernel.shape()[1]) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) + " vs kernel " +
                             shape_str(kernel.shape()));
    }
    if (kernel.shape()[2] != kernel.shape()[3] || kernel.shape()[2] % 2 == 0) {
        throw DimensionError("conv2d kernel must be square with odd side, got " + shape_str(kernel.shape()));
    }
    if (stride != 1 && stride != 2) {
        throw DimensionError("conv2d stride must be 1 or 2, got " + std::to_string(stride));
    }
    const std::size_t bs = input.shape()[0], c = input.shape()[1];
    const std::size_t h = input.shape()[2], w = input.shape()[3];
    const std::size_t f = kernel.shape()[0], kh = kernel.shape()[2];
    const std::size_t pad = kh / 2;
    const std::size_t s = static_cast<std::size_t>(stride);
    if (h + 2 * pad < kh || w + 2 * pad < kh) {
        throw DimensionError("conv2d input " + shape_str(input.shape()) + " smaller than kernel " +
                             shape_str(kernel.shape()));
    }
    const std::size_t oh = (h + 2 * pad - kh) / s + 1;
    const std::size_t ow = (w + 2 * pad - kh) / s + 1;

    Tensor out = Tensor::zeros({bs, f, oh, ow});
    {
        const auto& iv = input.values();
        const auto& kv = kernel.values();
        auto& ov = out.values();
        for (std::size_t b = 0; b < bs; ++b)
            for (std::size_t fo = 0; fo < f; ++fo)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        double acc = 0.0;
                        for (std::size_t ci = 0; ci < c; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(pad);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                const double* irow = iv.data() + ((b * c + ci) * h + iy) * w;
                                const double* krow = kv.data() + ((fo * c + ci) * kh + ky) * kh;
                                for (std::size_t kx = 0; kx < kh; ++kx) {
                                    const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(pad);
                                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                    acc += irow[ix] * krow[kx];
                                }
                            }
                        ov[((b * f + fo) * oh + oy) * ow + ox] = acc;
                    }
    }
    detail::ensure_finite("conv2d", out.values());
    if (detail::prepare(g, out, {input, kernel})) {
        auto in_n = input.node(), kn = kernel.node(), on = out.node();
        g->record("conv2d", [in_n, kn, on, bs, c, h, w, f, kh, pad, s, oh, ow] {
            const auto& go = on->grad;
            const bool gi = in_n->connected, gk = kn->connected;
            for (std::size_t b = 0; b < bs; ++b)
                for (std::size_t fo = 0; fo < f; ++fo)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const double go_v = go[((b * f + fo) * oh + oy) * ow + ox];
                            if (go_v == 0.0) continue;
                            for (std::size_t ci = 0; ci < c; ++ci)
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(pad);
                                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                    for (std::size_t kx = 0; kx < kh; ++kx) {
                                        const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(pad);
                                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                        const std::size_t ii = ((b * c + ci) * h + iy) * w + ix;
                                        const std::size_t ki = ((fo * c + ci) * kh + ky) * kh + kx;
                                        if (gi) in_n->grad[ii] += go_v * kn->values[ki];
                                        if (gk) kn->grad[ki] += go_v * in_n->values[ii];
                                    }
                                }
                        }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise binary ops with limited broadcasting

namespace detail {

enum class Broadcast { Same, ScalarRight, ScalarLeft, RowRight };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.size() == 1) return Broadcast::ScalarRight;
    if (a.size() == 1) return Broadcast::ScalarLeft;
    if (a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]) return Broadcast::RowRight;
    throw DimensionError(std::string(op) + " operands " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcastable");
}

// fwd(x, y) -> value; dx,dy are the partials at (x, y).
template <typename F, typename Dx, typename Dy>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Graph* g, F fwd, Dx dx, Dy dy) {
    const Broadcast kind = broadcast_kind(a, b, name);
    const Tensor& big = (kind == Broadcast::ScalarLeft) ? b : a;
    Tensor out = Tensor::zeros(big.shape());
    const std::size_t n = out.size();
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        const std::size_t cols = (kind == Broadcast::RowRight) ? a.shape()[1] : 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (kind == Broadcast::ScalarLeft) ? av[0] : av[i];
            const double y = (kind == Broadcast::Same) ? bv[i]
                           : (kind == Broadcast::RowRight) ? bv[i % cols]
                                                           : bv[kind == Broadcast::ScalarLeft ? i : 0];
            ov[i] = fwd(x, y);
        }
    }
    detail::ensure_finite(name, out.values());
    if (detail::prepare(g, out, {a, b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g->record(name, [an, bn, on, kind, n, dx, dy] {
            const auto& go = on->grad;
            const std::size_t cols = (kind == Broadcast::RowRight) ? on->shape[1] : 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = (kind == Broadcast::ScalarLeft) ? an->values[0] : an->values[i];
                const std::size_t bi = (kind == Broadcast::Same) ? i
                                     : (kind == Broadcast::RowRight) ? i % cols
                                     : (kind == Broadcast::ScalarLeft) ? i : 0;
                const double y = bn->values[bi];
                if (an->connected) an->grad[(kind == Broadcast::ScalarLeft) ? 0 : i] += go[i] * dx(x, y);
                if (bn->connected) bn->grad[bi] += go[i] * dy(x, y);
            }
        });
    }
    return out;
}

template <typename F, typename D>
Tensor unary_op(const char* name, const Tensor& a, Graph* g, F fwd, D dfn) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = fwd(a.values()[i], i);
    detail::ensure_finite(name, out.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        g->record(name, [an, on, n, dfn] {
            for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * dfn(an->values[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    return detail::binary_op("add", a, b, g,
                             [](double x, double y) { return x + y; },
                             [](double, double) { return 1.0; },
                             [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    return detail::binary_op("sub", a, b, g,
                             [](double x, double y) { return x - y; },
                             [](double, double) { return 1.0; },
                             [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    return detail::binary_op("mul", a, b, g,
                             [](double x, double y) { return x * y; },
                             [](double, double y) { return y; },
                             [](double x, double) { return x; });
}

inline Tensor relu(const Tensor& a, Graph* g = nullptr) {
    return detail::unary_op("relu", a, g,
                            [](double x, std::size_t) { return x > 0.0 ? x : 0.0; },
                            [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// Natural log; the gradient at x is 1/x. Non-positive input is a domain
// error naming the offending flat index.
inline Tensor log(const Tensor& a, Graph* g = nullptr) {
    return detail::unary_op("log", a, g,
                            [](double x, std::size_t i) {
                                if (x <= 0.0) {
                                    throw DomainError("log of non-positive value " + std::to_string(x) +
                                                      " at flat index " + std::to_string(i));
                                }
                                return std::log(x);
                            },
                            [](double x) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a, Graph* g = nullptr) {
    return detail::unary_op("square", a, g,
                            [](double x, std::size_t) { return x * x; },
                            [](double x) { return 2.0 * x; });
}

// Square root; negative input is a domain error. The one-sided
// derivative at exactly zero is clamped to zero.
inline Tensor sqrt(const Tensor& a, Graph* g = nullptr) {
    return detail::unary_op("sqrt", a, g,
                            [](double x, std::size_t i) {
                                if (x < 0.0) {
                                    throw DomainError("sqrt of negative value " + std::to_string(x) +
                                                      " at flat index " + std::to_string(i));
                                }
                                return std::sqrt(x);
                            },
                            [](double x) { return x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; });
}

inline Tensor add_scalar(const Tensor& a, double c, Graph* g = nullptr) {
    return detail::unary_op("add_scalar", a, g,
                            [c](double x, std::size_t) { return x + c; },
                            [](double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double c, Graph* g = nullptr) {
    return detail::unary_op("mul_scalar", a, g,
                            [c](double x, std::size_t) { return x * c; },
                            [c](double) { return c; });
}

// max(x, floor); used for variance flooring. Gradient passes where
// x >= floor and is zero below it.
inline Tensor clamp_min(const Tensor& a, double floor, Graph* g = nullptr) {
    return detail::unary_op("clamp_min", a, g,
                            [floor](double x, std::size_t) { return x > floor ? x : floor; },
                            [floor](double x) { return x >= floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions

namespace detail {

struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit axis_split(const Tensor& t, std::size_t axis, const char* op) {
    if (axis >= t.rank()) {
        throw DimensionError(std::string(op) + " axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(t.shape()));
    }
    AxisSplit s{1, t.shape()[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= t.shape()[i];
    for (std::size_t i = axis + 1; i < t.rank(); ++i) s.inner *= t.shape()[i];
    return s;
}

inline Shape drop_axis(const Shape& in, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < in.size(); ++i)
        if (i != axis) out.push_back(in[i]);
    return out;
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& a, std::size_t axis, Graph* g = nullptr) {
    const auto s = detail::axis_split(a, axis, "reduce_sum");
    Tensor out = Tensor::zeros(detail::drop_axis(a.shape(), axis));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
                out.values()[o * s.inner + i] += a.values()[(o * s.extent + e) * s.inner + i];
    detail::ensure_finite("reduce_sum", out.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        g->record("reduce_sum", [an, on, s] {
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t e = 0; e < s.extent; ++e)
                    for (std::size_t i = 0; i < s.inner; ++i)
                        an->grad[(o * s.extent + e) * s.inner + i] += on->grad[o * s.inner + i];
        });
    }
    return out;
}

inline Tensor reduce_mean(const Tensor& a, std::size_t axis, Graph* g = nullptr) {
    const auto s = detail::axis_split(a, axis, "reduce_mean");
    Tensor out = Tensor::zeros(detail::drop_axis(a.shape(), axis));
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
                out.values()[o * s.inner + i] += a.values()[(o * s.extent + e) * s.inner + i] * inv;
    detail::ensure_finite("reduce_mean", out.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        g->record("reduce_mean", [an, on, s, inv] {
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t e = 0; e < s.extent; ++e)
                    for (std::size_t i = 0; i < s.inner; ++i)
                        an->grad[(o * s.extent + e) * s.inner + i] += on->grad[o * s.inner + i] * inv;
        });
    }
    return out;
}

// Population variance (divides by the extent, not extent - 1). Requires
// extent >= 2; the derivative wrt element x is 2 (x - mean) / extent
// because the mean's own dependence cancels over the axis.
inline Tensor reduce_var(const Tensor& a, std::size_t axis, Graph* g = nullptr) {
    const auto s = detail::axis_split(a, axis, "reduce_var");
    if (s.extent < 2) {
        throw DegenerateBatchError("reduce_var needs extent >= 2 along axis " + std::to_string(axis) +
                                   ", got " + std::to_string(s.extent));
    }
    Tensor out = Tensor::zeros(detail::drop_axis(a.shape(), axis));
    const double inv = 1.0 / static_cast<double>(s.extent);
    std::vector<double> means(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
                means[o * s.inner + i] += a.values()[(o * s.extent + e) * s.inner + i] * inv;
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const double d = a.values()[(o * s.extent + e) * s.inner + i] - means[o * s.inner + i];
                out.values()[o * s.inner + i] += d * d * inv;
            }
    detail::ensure_finite("reduce_var", out.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        g->record("reduce_var", [an, on, s, inv, means = std::move(means)] {
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t e = 0; e < s.extent; ++e)
                    for (std::size_t i = 0; i < s.inner; ++i) {
                        const std::size_t ai = (o * s.extent + e) * s.inner + i;
                        const double d = an->values[ai] - means[o * s.inner + i];
                        an->grad[ai] += on->grad[o * s.inner + i] * 2.0 * d * inv;
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops

// [b,c,h,w] -> [b,c], mean over the spatial extent.
inline Tensor global_avg_pool(const Tensor& a, Graph* g = nullptr) {
    if (a.rank() != 4) {
        throw DimensionError("global_avg_pool expects rank-4 input, got " + shape_str(a.shape()));
    }
    const std::size_t b = a.shape()[0], c = a.shape()[1], hw = a.shape()[2] * a.shape()[3];
    Tensor out = Tensor::zeros({b, c});
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < b * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += a.values()[i * hw + p];
        out.values()[i] = acc * inv;
    }
    detail::ensure_finite("global_avg_pool", out.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        g->record("global_avg_pool", [an, on, b, c, hw, inv] {
            for (std::size_t i = 0; i < b * c; ++i)
                for (std::size_t p = 0; p < hw; ++p) an->grad[i * hw + p] += on->grad[i] * inv;
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape, Graph* g = nullptr) {
    if (shape_size(new_shape) != a.size()) {
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    }
    Tensor out(new_shape, a.values());
    if (detail::prepare(g, out, {a})) {
        auto an = a.node(), on = out.node();
        const std::size_t n = a.size();
        g->record("reshape", [an, on, n] {
            for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

// x: [b,f,h,w] plus per-channel bias [f].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias, Graph* g = nullptr) {
    if (x.rank() != 4 || bias.rank() != 1 || bias.shape()[0] != x.shape()[1]) {
        throw DimensionError("add_channel_bias operands " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()) + " are incompatible");
    }
    const std::size_t b = x.shape()[0], f = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t fi = 0; fi < f; ++fi) {
            const double bv = bias.values()[fi];
            const std::size_t base = (bi * f + fi) * hw;
            for (std::size_t p = 0; p < hw; ++p) out.values()[base + p] = x.values()[base + p] + bv;
        }
    detail::ensure_finite("add_channel_bias", out.values());
    if (detail::prepare(g, out, {x, bias})) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        g->record("add_channel_bias", [xn, bn, on, b, f, hw] {
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t fi = 0; fi < f; ++fi) {
                    const std::size_t base = (bi * f + fi) * hw;
                    for (std::size_t p = 0; p < hw; ++p) {
                        if (xn->connected) xn->grad[base + p] += on->grad[base + p];
                        if (bn->connected) bn->grad[fi] += on->grad[base + p];
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy

// Mean binary cross-entropy of logits against labels in [0,1], computed
// in the numerically stable log-sum-exp form
//   loss_i = max(l_i, 0) - l_i y_i + log(1 + exp(-|l_i|)).
// logits: [n] or [n,1]; returns a scalar.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels, Graph* g = nullptr) {
    const bool col = logits.rank() == 2 && logits.shape()[1] == 1;
    if (!(logits.rank() == 1 || col)) {
        throw DimensionError("bce_with_logits expects logits [n] or [n,1], got " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.size();
    if (labels.size() != n) {
        throw DimensionError("bce_with_logits got " + std::to_string(n) + " logits and " +
                             std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(labels[i] >= 0.0 && labels[i] <= 1.0)) {
            throw DomainError("bce_with_logits label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " lies outside [0,1]");
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = logits.values()[i];
        acc += std::max(l, 0.0) - l * labels[i] + std::log1p(std::exp(-std::abs(l)));
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    detail::ensure_finite("bce_with_logits", out.values());
    if (detail::prepare(g, out, {logits})) {
        auto ln = logits.node(), on = out.node();
        g->record("bce_with_logits", [ln, on, labels, n] {
            const double go = on->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double l = ln->values[i];
                const double sig = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
                ln->grad[i] += go * (sig - labels[i]);
            }
        });
    }
    return out;
}

// Numerically stable logistic function.
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace regnet::num
