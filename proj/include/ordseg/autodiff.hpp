#pragma once

// Minimal reverse-mode differentiation over dense double arrays.
//
// A Graph records operations eagerly in creation order, which is a valid
// topological order, so backward() is a single reverse sweep. Gradients land
// in Var::grad() for variable leaves and accumulate into Parameter::grad for
// parameter leaves, so several graphs can contribute to one optimizer step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t d = 0; d < shape.size(); ++d) s += (d ? "," : "") + std::to_string(shape[d]);
    return s + "]";
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        data_.assign(count(shape_), fill);
    }
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw ValidationError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                  shape_string(shape_));
        }
    }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor from_grid(const Grid<double>& g) {
        return Tensor(Shape{static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width()),
                            static_cast<std::size_t>(g.channels())},
                      g.data());
    }

    /// Interprets a [H,W] or [H,W,C] tensor as a grid.
    Grid<double> to_grid() const {
        if (shape_.size() != 2 && shape_.size() != 3) {
            throw ValidationError("cannot view tensor of shape " + shape_string(shape_) + " as a grid");
        }
        const int c = shape_.size() == 3 ? static_cast<int>(shape_[2]) : 1;
        return Grid<double>(static_cast<int>(shape_[0]), static_cast<int>(shape_[1]), c, data_);
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t d) const noexcept { return shape_[d]; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }
    double item() const {
        if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }
    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    static std::size_t count(const Shape& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Trainable array living outside any graph.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
    void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

class Graph;

/// Handle to a node of a Graph.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const noexcept { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    // Propagates the node's output gradient into its inputs' gradients.
    using Backprop = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value) { return push("constant", std::move(value), {}, false, nullptr); }
    Var constant(double v) { return constant(Tensor::scalar(v)); }

    /// Leaf whose gradient is kept on the node after backward().
    Var variable(Tensor value) { return push("variable", std::move(value), {}, true, nullptr); }

    /// Leaf bound to an external parameter; backward() adds into param.grad.
    Var parameter(Parameter& param) {
        Var v = push("parameter", param.value, {}, true, nullptr);
        nodes_[v.id()].param = &param;
        return v;
    }

    /// Records an operation. `backprop` runs only if some input requires a gradient.
    Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop) {
        bool needs = false;
        for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
        if (!value.all_finite()) throw NumericError("non-finite value produced by " + op);
        return push(std::move(op), std::move(value), std::move(inputs), needs, needs ? std::move(backprop) : nullptr);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t input(std::size_t id, std::size_t slot) const { return nodes_.at(id).inputs.at(slot); }

    /// Gradient buffer of an input, or nullptr when it needs none.
    Tensor* grad_of_input(std::size_t id, std::size_t slot) {
        Node& in = nodes_.at(nodes_.at(id).inputs.at(slot));
        return in.requires_grad ? &in.grad : nullptr;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    void backward(Var loss) {
        if (&loss.graph() != this) throw UsageError("loss does not belong to this graph");
        if (backward_done_) throw UsageError("backward() already ran on this graph");
        Node& root = nodes_.at(loss.id());
        if (root.value.size() != 1) {
            throw UsageError("backward() needs a scalar loss, got shape " + shape_string(root.value.shape()));
        }
        backward_done_ = true;
        for (std::size_t n = 0; n <= loss.id(); ++n) {
            if (nodes_[n].requires_grad) nodes_[n].grad = Tensor(nodes_[n].value.shape());
        }
        if (!root.requires_grad) return;
        root.grad[0] = 1.0;
        for (std::size_t n = loss.id() + 1; n-- > 0;) {
            Node& node = nodes_[n];
            if (!node.requires_grad) continue;
            if (node.backprop) {
                node.backprop(*this, n);
                for (std::size_t in : nodes_[n].inputs) {
                    if (nodes_[in].requires_grad && !nodes_[in].grad.all_finite()) {
                        throw NumericError("non-finite gradient from " + nodes_[n].op);
                    }
                }
            } else if (node.param != nullptr) {
                auto& dst = node.param->grad.data();
                const auto& src = node.grad.data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
        }
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        Backprop backprop;
        Parameter* param = nullptr;
    };

    Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, bool requires_grad, Backprop backprop) {
        nodes_.push_back(Node{std::move(op), std::move(value), Tensor{}, std::move(inputs), requires_grad,
                              std::move(backprop), nullptr});
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Tensor& Var::grad() const { return graph_->grad(id_); }

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                              shape_string(b.shape()));
    }
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.value().rank() != rank) {
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                              shape_string(a.shape()));
    }
}

/// y = f(x) elementwise with dy/dx = df(x, y).
template <typename F, typename DF>
Var unary(const char* op, Var x, F f, DF df) {
    Graph& g = x.graph();
    Tensor out(x.shape());
    const auto& xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return g.record(op, std::move(out), {x.id()}, [df](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_of_input(self, 0);
        const auto& xv = gr.value(gr.input(self, 0)).data();
        const auto& yv = gr.value(self).data();
        const auto& gy = gr.grad(self).data();
        for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * df(xv[i], yv[i]);
    });
}

}  // namespace detail

inline Var add(Var a, Var b) {
    detail::require_same(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return a.graph().record("add", std::move(out), {a.id(), b.id()}, [](Graph& g, std::size_t self) {
        const auto& gy = g.grad(self).data();
        for (std::size_t slot = 0; slot < 2; ++slot) {
            if (Tensor* gx = g.grad_of_input(self, slot)) {
                for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
            }
        }
    });
}

inline Var sub(Var a, Var b) {
    detail::require_same(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return a.graph().record("sub", std::move(out), {a.id(), b.id()}, [](Graph& g, std::size_t self) {
        const auto& gy = g.grad(self).data();
        if (Tensor* ga = g.grad_of_input(self, 0)) {
            for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
        }
        if (Tensor* gb = g.grad_of_input(self, 1)) {
            for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] -= gy[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    detail::require_same(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return a.graph().record("mul", std::move(out), {a.id(), b.id()}, [](Graph& g, std::size_t self) {
        const auto& gy = g.grad(self).data();
        const auto& av = g.value(g.input(self, 0)).data();
        const auto& bv = g.value(g.input(self, 1)).data();
        if (Tensor* ga = g.grad_of_input(self, 0)) {
            for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
        }
        if (Tensor* gb = g.grad_of_input(self, 1)) {
            for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
        }
    });
}

inline Var scale(Var x, double s) {
    return detail::unary("scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var x, double s) {
    return detail::unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Var relu(Var x) {
    return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                         [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var x) {
    return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

/// log(clamp(x, floor, 1)); zero derivative where the clamp is active.
inline Var log_clamped(Var x, double floor = 1e-12) {
    return detail::unary(
        "log", x, [floor](double v) { return std::log(std::clamp(v, floor, 1.0)); },
        [floor](double v, double) { return (v > floor && v <= 1.0) ? 1.0 / v : 0.0; });
}

inline Var square(Var x) {
    return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var abs(Var x) {
    return detail::unary("abs", x, [](double v) { return std::abs(v); },
                         [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var sum(Var x) {
    const auto& xv = x.value().data();
    double total = 0.0;
    for (double v : xv) total += v;
    return x.graph().record("sum", Tensor::scalar(total), {x.id()}, [](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const double gy = g.grad(self)[0];
        for (double& v : gx->data()) v += gy;
    });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Softmax over the last axis.
inline Var softmax_last(Var x) {
    const Tensor& xv = x.value();
    const std::size_t k = xv.shape().back();
    Tensor out(xv.shape());
    for (std::size_t base = 0; base < xv.size(); base += k) {
        softmax_pixel(std::span<const double>(xv.data().data() + base, k), std::span<double>(out.data().data() + base, k));
    }
    return x.graph().record("softmax", std::move(out), {x.id()}, [k](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const auto& p = g.value(self).data();
        const auto& gy = g.grad(self).data();
        for (std::size_t base = 0; base < p.size(); base += k) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += gy[base + c] * p[base + c];
            for (std::size_t c = 0; c < k; ++c) (*gx)[base + c] += p[base + c] * (gy[base + c] - dot);
        }
    });
}

/// out[..., ] = x[..., index[...]] over the last axis; index -1 yields 0.
inline Var gather_last(Var x, std::vector<int> index) {
    const Tensor& xv = x.value();
    const std::size_t k = xv.shape().back();
    Shape shape(xv.shape().begin(), xv.shape().end() - 1);
    if (shape.empty()) shape.push_back(1);
    if (index.size() != Tensor::count(shape)) throw ValidationError("gather_last: index length mismatch");
    Tensor out(shape);
    for (std::size_t p = 0; p < index.size(); ++p) {
        if (index[p] >= static_cast<int>(k)) throw ValidationError("gather_last: index out of range");
        out[p] = index[p] < 0 ? 0.0 : xv[p * k + static_cast<std::size_t>(index[p])];
    }
    return x.graph().record("gather", std::move(out), {x.id()},
                            [k, idx = std::move(index)](Graph& g, std::size_t self) {
                                Tensor* gx = g.grad_of_input(self, 0);
                                const auto& gy = g.grad(self).data();
                                for (std::size_t p = 0; p < idx.size(); ++p) {
                                    if (idx[p] >= 0) (*gx)[p * k + static_cast<std::size_t>(idx[p])] += gy[p];
                                }
                            });
}

/// Channel c of a [..., K] tensor.
inline Var slice_last(Var x, std::size_t c) {
    const std::size_t k = x.value().shape().back();
    std::vector<int> index(x.value().size() / k, static_cast<int>(c));
    return gather_last(x, std::move(index));
}

/// out[...] = sum_c x[..., c] * weights[c].
inline Var dot_last(Var x, std::vector<double> weights) {
    const Tensor& xv = x.value();
    const std::size_t k = xv.shape().back();
    if (weights.size() != k) throw ValidationError("dot_last: weight length mismatch");
    Shape shape(xv.shape().begin(), xv.shape().end() - 1);
    if (shape.empty()) shape.push_back(1);
    Tensor out(shape);
    for (std::size_t p = 0; p < out.size(); ++p) {
        double acc = 0.0;
        for (std::size_t c = 0; c < k; ++c) acc += xv[p * k + c] * weights[c];
        out[p] = acc;
    }
    return x.graph().record("dot_last", std::move(out), {x.id()}, [k, w = std::move(weights)](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const auto& gy = g.grad(self).data();
        for (std::size_t p = 0; p < gy.size(); ++p) {
            for (std::size_t c = 0; c < k; ++c) (*gx)[p * k + c] += gy[p] * w[c];
        }
    });
}

/// out[..., s] = sum_r x[..., r] * m[r][s] with m row-major K x K2 (constant).
inline Var matmul_last(Var x, std::vector<double> m, std::size_t cols) {
    const Tensor& xv = x.value();
    const std::size_t k = xv.shape().back();
    if (m.size() != k * cols) throw ValidationError("matmul_last: matrix size mismatch");
    Shape shape = xv.shape();
    shape.back() = cols;
    Tensor out(shape);
    const std::size_t rows = xv.size() / k;
    for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t r = 0; r < k; ++r) {
            const double a = xv[p * k + r];
            for (std::size_t s = 0; s < cols; ++s) out[p * cols + s] += a * m[r * cols + s];
        }
    }
    return x.graph().record("matmul_last", std::move(out), {x.id()},
                            [k, cols, rows, mm = std::move(m)](Graph& g, std::size_t self) {
                                Tensor* gx = g.grad_of_input(self, 0);
                                const auto& gy = g.grad(self).data();
                                for (std::size_t p = 0; p < rows; ++p) {
                                    for (std::size_t r = 0; r < k; ++r) {
                                        double acc = 0.0;
                                        for (std::size_t s = 0; s < cols; ++s) acc += gy[p * cols + s] * mm[r * cols + s];
                                        (*gx)[p * k + r] += acc;
                                    }
                                }
                            });
}

/// Sub-window rows [r0, r1) x cols [c0, c1) of a [H, W, C] tensor.
inline Var crop(Var x, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    detail::require_rank(x, 3, "crop");
    const Tensor& xv = x.value();
    const std::size_t w = xv.dim(1);
    const std::size_t ch = xv.dim(2);
    if (r0 > r1 || r1 > xv.dim(0) || c0 > c1 || c1 > w) throw ValidationError("crop: window out of bounds");
    Tensor out(Shape{r1 - r0, c1 - c0, ch});
    for (std::size_t i = r0; i < r1; ++i) {
        for (std::size_t j = c0; j < c1; ++j) {
            for (std::size_t c = 0; c < ch; ++c) out[((i - r0) * (c1 - c0) + (j - c0)) * ch + c] = xv[(i * w + j) * ch + c];
        }
    }
    return x.graph().record("crop", std::move(out), {x.id()}, [=](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const auto& gy = g.grad(self).data();
        for (std::size_t i = r0; i < r1; ++i) {
            for (std::size_t j = c0; j < c1; ++j) {
                for (std::size_t c = 0; c < ch; ++c) (*gx)[(i * w + j) * ch + c] += gy[((i - r0) * (c1 - c0) + (j - c0)) * ch + c];
            }
        }
    });
}

/// Same-padded stride-1 convolution. x: [H, W, Ci], w: [kh, kw, Ci, Co], b: [Co].
inline Var conv2d(Var x, Var w, Var b) {
    detail::require_rank(x, 3, "conv2d");
    detail::require_rank(w, 4, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const std::size_t h = xv.dim(0), wd = xv.dim(1), ci = xv.dim(2);
    const std::size_t kh = wv.dim(0), kw = wv.dim(1), co = wv.dim(3);
    if (wv.dim(2) != ci || b.value().size() != co || kh % 2 == 0 || kw % 2 == 0) {
        throw ValidationError("conv2d: incompatible shapes " + shape_string(xv.shape()) + " * " + shape_string(wv.shape()));
    }
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    Tensor out(Shape{h, wd, co});
    const double* xp = xv.data().data();
    const double* wp = wv.data().data();
    double* op = out.data().data();
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < wd; ++j) {
            double* o = op + (i * wd + j) * co;
            for (std::size_t c = 0; c < co; ++c) o[c] = b.value()[c];
            for (std::size_t di = 0; di < kh; ++di) {
                const long si = static_cast<long>(i + di) - ph;
                if (si < 0 || si >= static_cast<long>(h)) continue;
                for (std::size_t dj = 0; dj < kw; ++dj) {
                    const long sj = static_cast<long>(j + dj) - pw;
                    if (sj < 0 || sj >= static_cast<long>(wd)) continue;
                    const double* xin = xp + (static_cast<std::size_t>(si) * wd + static_cast<std::size_t>(sj)) * ci;
                    const double* wk = wp + (di * kw + dj) * ci * co;
                    for (std::size_t c = 0; c < ci; ++c) {
                        const double a = xin[c];
                        const double* wr = wk + c * co;
                        for (std::size_t o2 = 0; o2 < co; ++o2) o[o2] += a * wr[o2];
                    }
                }
            }
        }
    }
    return x.graph().record("conv2d", std::move(out), {x.id(), w.id(), b.id()}, [=](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        Tensor* gw = g.grad_of_input(self, 1);
        Tensor* gb = g.grad_of_input(self, 2);
        const double* xp = g.value(g.input(self, 0)).data().data();
        const double* wp = g.value(g.input(self, 1)).data().data();
        const double* gy = g.grad(self).data().data();
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
                const double* go = gy + (i * wd + j) * co;
                if (gb) {
                    for (std::size_t c = 0; c < co; ++c) (*gb)[c] += go[c];
                }
                for (std::size_t di = 0; di < kh; ++di) {
                    const long si = static_cast<long>(i + di) - ph;
                    if (si < 0 || si >= static_cast<long>(h)) continue;
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        const long sj = static_cast<long>(j + dj) - pw;
                        if (sj < 0 || sj >= static_cast<long>(wd)) continue;
                        const std::size_t xoff = (static_cast<std::size_t>(si) * wd + static_cast<std::size_t>(sj)) * ci;
                        const std::size_t woff = (di * kw + dj) * ci * co;
                        for (std::size_t c = 0; c < ci; ++c) {
                            const double* wr = wp + woff + c * co;
                            if (gx) {
                                double acc = 0.0;
                                for (std::size_t o2 = 0; o2 < co; ++o2) acc += go[o2] * wr[o2];
                                (*gx)[xoff + c] += acc;
                            }
                            if (gw) {
                                const double a = xp[xoff + c];
                                double* gwr = gw->data().data() + woff + c * co;
                                for (std::size_t o2 = 0; o2 < co; ++o2) gwr[o2] += a * go[o2];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// 2x2 average pooling of [H, W, C]; H and W must be even.
inline Var avg_pool2(Var x) {
    detail::require_rank(x, 3, "avg_pool2");
    const Tensor& xv = x.value();
    const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    if (h % 2 || w % 2) throw ValidationError("avg_pool2: odd spatial size " + shape_string(xv.shape()));
    Tensor out(Shape{h / 2, w / 2, c});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t k = 0; k < c; ++k) out[((i / 2) * (w / 2) + j / 2) * c + k] += 0.25 * xv[(i * w + j) * c + k];
        }
    }
    return x.graph().record("avg_pool2", std::move(out), {x.id()}, [=](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const auto& gy = g.grad(self).data();
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                for (std::size_t k = 0; k < c; ++k) (*gx)[(i * w + j) * c + k] += 0.25 * gy[((i / 2) * (w / 2) + j / 2) * c + k];
            }
        }
    });
}

/// Nearest-neighbour 2x upsampling of [H, W, C].
inline Var upsample2(Var x) {
    detail::require_rank(x, 3, "upsample2");
    const Tensor& xv = x.value();
    const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    Tensor out(Shape{2 * h, 2 * w, c});
    for (std::size_t i = 0; i < 2 * h; ++i) {
        for (std::size_t j = 0; j < 2 * w; ++j) {
            for (std::size_t k = 0; k < c; ++k) out[(i * 2 * w + j) * c + k] = xv[((i / 2) * w + j / 2) * c + k];
        }
    }
    return x.graph().record("upsample2", std::move(out), {x.id()}, [=](Graph& g, std::size_t self) {
        Tensor* gx = g.grad_of_input(self, 0);
        const auto& gy = g.grad(self).data();
        for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) {
                for (std::size_t k = 0; k < c; ++k) (*gx)[((i / 2) * w + j / 2) * c + k] += gy[(i * 2 * w + j) * c + k];
            }
        }
    });
}

/// Concatenation of two [H, W, *] tensors along the channel axis.
inline Var concat_last(Var a, Var b) {
    detail::require_rank(a, 3, "concat_last");
    detail::require_rank(b, 3, "concat_last");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) throw ValidationError("concat_last: spatial mismatch");
    const std::size_t pixels = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
    Tensor out(Shape{av.dim(0), av.dim(1), ca + cb});
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(av.data().begin() + static_cast<long>(p * ca), ca, out.data().begin() + static_cast<long>(p * (ca + cb)));
        std::copy_n(bv.data().begin() + static_cast<long>(p * cb), cb, out.data().begin() + static_cast<long>(p * (ca + cb) + ca));
    }
    return a.graph().record("concat_last", std::move(out), {a.id(), b.id()}, [=](Graph& g, std::size_t self) {
        const auto& gy = g.grad(self).data();
        Tensor* ga = g.grad_of_input(self, 0);
        Tensor* gb = g.grad_of_input(self, 1);
        for (std::size_t p = 0; p < pixels; ++p) {
            if (ga) {
                for (std::size_t c = 0; c < ca; ++c) (*ga)[p * ca + c] += gy[p * (ca + cb) + c];
            }
            if (gb) {
                for (std::size_t c = 0; c < cb; ++c) (*gb)[p * cb + c] += gy[p * (ca + cb) + ca + c];
            }
        }
    });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    double step = 0.0;
    double noise_floor = 0.0;  // absolute errors at or below this are rounding
    std::size_t worst_index = 0;
    bool passed = false;
};

/// Builds a scalar loss from a leaf holding the evaluation point.
using GraphFn = std::function<Var(Graph&, Var)>;

/// Compares backward() against central differences coordinate by coordinate.
/// A coordinate passes when |numeric - analytic| <= tol_rel * max(|numeric|,
/// |analytic|), or when the error is within the rounding noise of the central
/// difference itself, 16 * eps * max(1, |f|) / h. max_rel_error covers only
/// coordinates whose gradient is large enough for that ratio to be resolved.
inline GradCheckReport finite_diff_check(const GraphFn& loss_fn, const Tensor& point, double h, double tol_rel) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
    auto evaluate = [&](const Tensor& x) {
        Graph g;
        return loss_fn(g, g.constant(x)).item();
    };
    const double f0 = evaluate(point);
    if (f0 != evaluate(point)) throw OracleError("loss function is not deterministic");
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / h;

    Graph g;
    Var leaf = g.variable(point);
    g.backward(loss_fn(g, leaf));
    const Tensor analytic = leaf.grad();

    GradCheckReport report;
    report.step = h;
    report.noise_floor = noise;
    report.passed = true;
    double worst = -1.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + h;
        const double up = evaluate(probe);
        probe[i] = point[i] - h;
        const double down = evaluate(probe);
        probe[i] = point[i];
        const double numeric = (up - down) / (2.0 * h);
        const double abs_err = std::abs(numeric - analytic[i]);
        const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
        if (tol_rel * scale >= noise) report.max_rel_error = std::max(report.max_rel_error, rel_err);
        if (abs_err <= noise) continue;
        if (!(rel_err <= tol_rel)) report.passed = false;
        if (rel_err > worst) {
            worst = rel_err;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace ordseg::ad
