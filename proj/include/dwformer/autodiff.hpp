#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dwformer/error.hpp"
#include "dwformer/tensor.hpp"

namespace dwformer {

namespace detail {

struct Node;

// Routes parameter gradients into external buffers (one per worker thread)
// instead of the shared accumulators on the parameter nodes themselves.
struct GradSink {
    std::unordered_map<const Node*, Tensor*> buffers;
};

struct BackwardCtx {
    uint64_t pass = 0;
    GradSink* sink = nullptr;
};

inline thread_local BackwardCtx g_backward_ctx;

struct Node {
    Tensor value;
    Tensor grad;          // accumulator, same shape as value once touched
    uint64_t grad_pass = 0;
    bool requires_grad = false;
    bool is_param = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;
};

// Gradient buffer for `n` in the current backward pass. Intermediate nodes get
// a zeroed accumulator on first touch; parameters keep a persistent one (or a
// sink buffer in threaded mode).
inline Tensor& grad_buffer(Node& n) {
    if (n.is_param) {
        if (g_backward_ctx.sink) {
            auto it = g_backward_ctx.sink->buffers.find(&n);
            if (it != g_backward_ctx.sink->buffers.end()) return *it->second;
        }
        return n.grad;
    }
    if (n.grad_pass != g_backward_ctx.pass) {
        if (n.grad.shape != n.value.shape)
            n.grad = Tensor(n.value.shape);
        else
            std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
        n.grad_pass = g_backward_ctx.pass;
    }
    return n.grad;
}

} // namespace detail

// Handle to one tape node. Copies alias the same node; the tape is the
// shared_ptr DAG formed by node inputs and is freed when handles go away.
class Var {
public:
    Var() = default;

    explicit Var(Tensor value, bool requires_grad = false) {
        n_ = std::make_shared<detail::Node>();
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
    }

    static Var param(Tensor value) {
        Var v(std::move(value), true);
        v.n_->is_param = true;
        v.n_->grad = Tensor(v.n_->value.shape);
        return v;
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const { return n_->value; }
    Tensor& mutable_value() { return n_->value; }
    const Tensor& grad() const { return n_->grad; }
    Tensor& grad() { return n_->grad; }
    const Shape& shape() const { return n_->value.shape; }
    int64_t size() const { return n_->value.size(); }
    int64_t rank() const { return n_->value.rank(); }
    int64_t dim(int64_t i) const { return n_->value.dim(i); }
    bool requires_grad() const { return n_->requires_grad; }
    bool is_param() const { return n_->is_param; }

    void zero_grad() {
        if (n_->is_param) std::fill(n_->grad.data.begin(), n_->grad.data.end(), 0.0);
    }

    detail::Node* node() const { return n_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

private:
    std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
    bool needs = false;
    for (const Var& v : inputs)
        if (v.requires_grad()) needs = true;
    Var out(std::move(value), needs);
    if (needs) {
        auto& n = *out.node();
        n.inputs.reserve(inputs.size());
        for (Var& v : inputs) n.inputs.push_back(v.node_ptr());
        n.backprop = std::move(backprop);
    }
    return out;
}

inline std::atomic<uint64_t> g_pass_counter{0};

} // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients of parameters accumulate
// into their persistent buffers (or into `sink` buffers when given), so a
// batch can sum per-sample backward passes before one optimizer step.
inline void backward(const Var& loss, detail::GradSink* sink = nullptr) {
    detail::Node* root = loss.node();
    if (root == nullptr) throw ContractError("backward: undefined loss");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (root->backward_done) throw ContractError("backward: already ran for this loss node");
    root->backward_done = true;
    if (!root->requires_grad) return;

    detail::g_backward_ctx.pass = 1 + detail::g_pass_counter.fetch_add(1, std::memory_order_relaxed);
    detail::g_backward_ctx.sink = sink;

    // Iterative post-order DFS; reversed post-order is a valid topological
    // order for the backward visit.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* in = node->inputs[next++].get();
            if (in->requires_grad && visited.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    detail::grad_buffer(*root).data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->backprop) continue;
        if (!n->is_param && n->grad_pass != detail::g_backward_ctx.pass) continue; // no contribution reached it
        n->backprop(*n);
    }
    detail::g_backward_ctx.sink = nullptr;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

// Elementwise binary ops accept equal shapes or a `b` whose shape is a
// trailing suffix of `a`'s (b is then tiled over the leading axes).
inline void check_suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (b.size() > a.size())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " vs " + shape_str(b));
    for (size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " vs " + shape_str(b));
}

} // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::check_suffix_broadcast(a.shape(), b.shape(), "add");
    const int64_t an = a.size(), bn = b.size();
    Tensor out(a.shape());
    const double* ap = a.value().data.data();
    const double* bp = b.value().data.data();
    for (int64_t i = 0; i < an; ++i) out.data[i] = ap[i] + bp[i % bn];
    detail::Node* na = a.node();
    detail::Node* nb = b.node();
    return detail::make_node(std::move(out), {a, b}, [na, nb, an, bn](detail::Node& self) {
        const double* g = self.grad.data.data();
        if (na->requires_grad) {
            double* da = detail::grad_buffer(*na).data.data();
            for (int64_t i = 0; i < an; ++i) da[i] += g[i];
        }
        if (nb->requires_grad) {
            double* db = detail::grad_buffer(*nb).data.data();
            for (int64_t i = 0; i < an; ++i) db[i % bn] += g[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_suffix_broadcast(a.shape(), b.shape(), "mul");
    const int64_t an = a.size(), bn = b.size();
    Tensor out(a.shape());
    const double* ap = a.value().data.data();
    const double* bp = b.value().data.data();
    for (int64_t i = 0; i < an; ++i) out.data[i] = ap[i] * bp[i % bn];
    detail::Node* na = a.node();
    detail::Node* nb = b.node();
    return detail::make_node(std::move(out), {a, b}, [na, nb, an, bn](detail::Node& self) {
        const double* g = self.grad.data.data();
        const double* ap = na->value.data.data();
        const double* bp = nb->value.data.data();
        if (na->requires_grad) {
            double* da = detail::grad_buffer(*na).data.data();
            for (int64_t i = 0; i < an; ++i) da[i] += g[i] * bp[i % bn];
        }
        if (nb->requires_grad) {
            double* db = detail::grad_buffer(*nb).data.data();
            for (int64_t i = 0; i < an; ++i) db[i % bn] += g[i] * ap[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out(a.shape());
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.data[i] = c * a.value().data[i];
    detail::Node* na = a.node();
    return detail::make_node(std::move(out), {a}, [na, c, n](detail::Node& self) {
        double* da = detail::grad_buffer(*na).data.data();
        const double* g = self.grad.data.data();
        for (int64_t i = 0; i < n; ++i) da[i] += c * g[i];
    });
}

inline Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

inline Var relu(const Var& a) {
    Tensor out(a.shape());
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) {
        const double v = a.value().data[i];
        out.data[i] = v > 0.0 ? v : 0.0; // relu'(0) = 0
    }
    detail::Node* na = a.node();
    return detail::make_node(std::move(out), {a}, [na, n](detail::Node& self) {
        double* da = detail::grad_buffer(*na).data.data();
        const double* g = self.grad.data.data();
        const double* x = na->value.data.data();
        for (int64_t i = 0; i < n; ++i)
            if (x[i] > 0.0) da[i] += g[i];
    });
}

namespace detail {

struct MatmulDims {
    int64_t batch; // product of leading dims of a
    int64_t m, k, n;
    bool b_batched;
};

inline MatmulDims matmul_dims(const Shape& a, const Shape& b, int64_t b_rows, int64_t b_cols,
                              const char* op) {
    if (a.size() < 2 || b.size() < 2)
        throw ShapeError(std::string(op) + ": operands must be at least rank 2, got " +
                         shape_str(a) + " and " + shape_str(b));
    MatmulDims d;
    d.m = a[a.size() - 2];
    d.k = a[a.size() - 1];
    if (d.k != b_rows)
        throw ShapeError(std::string(op) + ": inner dimensions disagree, " + shape_str(a) +
                         " vs " + shape_str(b));
    d.n = b_cols;
    d.batch = 1;
    for (size_t i = 0; i + 2 < a.size(); ++i) d.batch *= a[i];
    d.b_batched = b.size() > 2;
    if (d.b_batched) {
        if (a.size() != b.size())
            throw ShapeError(std::string(op) + ": batch ranks disagree, " + shape_str(a) +
                             " vs " + shape_str(b));
        for (size_t i = 0; i + 2 < a.size(); ++i)
            if (a[i] != b[i])
                throw ShapeError(std::string(op) + ": batch dimensions disagree, " +
                                 shape_str(a) + " vs " + shape_str(b));
    }
    return d;
}

} // namespace detail

// a[..,m,k] @ b[..,k,n] -> [..,m,n]. Leading batch dims must match exactly;
// a rank-2 b is shared across all batches of a.
inline Var matmul(const Var& a, const Var& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto d = detail::matmul_dims(as, bs, bs[bs.size() - 2], bs[bs.size() - 1], "matmul");
    Shape os(as.begin(), as.end() - 1);
    os.push_back(d.n);
    Tensor out(os);
    const double* ap = a.value().data.data();
    const double* bp = b.value().data.data();
    for (int64_t t = 0; t < d.batch; ++t)
        kernel::gemm_nn(ap + t * d.m * d.k, d.b_batched ? bp + t * d.k * d.n : bp,
                        out.data.data() + t * d.m * d.n, d.m, d.k, d.n, false);
    detail::Node* na = a.node();
    detail::Node* nb = b.node();
    return detail::make_node(std::move(out), {a, b}, [na, nb, d](detail::Node& self) {
        const double* g = self.grad.data.data();
        const double* ap = na->value.data.data();
        const double* bp = nb->value.data.data();
        if (na->requires_grad) {
            double* da = detail::grad_buffer(*na).data.data();
            for (int64_t t = 0; t < d.batch; ++t) // dA = dY * B^T
                kernel::gemm_nt(g + t * d.m * d.n, d.b_batched ? bp + t * d.k * d.n : bp,
                                da + t * d.m * d.k, d.m, d.n, d.k, true);
        }
        if (nb->requires_grad) {
            double* db = detail::grad_buffer(*nb).data.data();
            for (int64_t t = 0; t < d.batch; ++t) // dB = A^T * dY
                kernel::gemm_tn(ap + t * d.m * d.k, g + t * d.m * d.n,
                                d.b_batched ? db + t * d.k * d.n : db, d.m, d.k, d.n, true);
        }
    });
}

// a[..,m,k] @ b[..,n,k]^T -> [..,m,n]
inline Var matmul_nt(const Var& a, const Var& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto d = detail::matmul_dims(as, bs, bs[bs.size() - 1], bs[bs.size() - 2], "matmul_nt");
    Shape os(as.begin(), as.end() - 1);
    os.push_back(d.n);
    Tensor out(os);
    const double* ap = a.value().data.data();
    const double* bp = b.value().data.data();
    for (int64_t t = 0; t < d.batch; ++t)
        kernel::gemm_nt(ap + t * d.m * d.k, d.b_batched ? bp + t * d.n * d.k : bp,
                        out.data.data() + t * d.m * d.n, d.m, d.k, d.n, false);
    detail::Node* na = a.node();
    detail::Node* nb = b.node();
    return detail::make_node(std::move(out), {a, b}, [na, nb, d](detail::Node& self) {
        const double* g = self.grad.data.data();
        const double* ap = na->value.data.data();
        const double* bp = nb->value.data.data();
        if (na->requires_grad) {
            double* da = detail::grad_buffer(*na).data.data();
            for (int64_t t = 0; t < d.batch; ++t) // dA = dY * B
                kernel::gemm_nn(g + t * d.m * d.n, d.b_batched ? bp + t * d.n * d.k : bp,
                                da + t * d.m * d.k, d.m, d.n, d.k, true);
        }
        if (nb->requires_grad) {
            double* db = detail::grad_buffer(*nb).data.data();
            for (int64_t t = 0; t < d.batch; ++t) // dB = dY^T * A
                kernel::gemm_tn(g + t * d.m * d.n, ap + t * d.m * d.k,
                                d.b_batched ? db + t * d.n * d.k : db, d.m, d.n, d.k, true);
        }
    });
}

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Shared softmax-over-last-axis kernel. `mask` may be null (everything
// visible); otherwise its shape must be a trailing suffix of `x`'s and its
// entries exactly 0 or -inf. Row max is taken over visible entries only.
inline Tensor softmax_forward(const Tensor& x, const Tensor* mask) {
    const int64_t L = x.dim(-1);
    const int64_t rows = x.size() / L;
    const int64_t mn = mask ? mask->size() : 0;
    if (mask) {
        check_suffix_broadcast(x.shape, mask->shape, "masked_softmax");
        for (double v : mask->data)
            if (v != 0.0 && v != kNegInf)
                throw MaskError("masked_softmax: mask entries must be 0 or -inf");
    }
    Tensor out(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * L;
        const double* mr = mask ? mask->data.data() + (r * L) % mn : nullptr;
        double* yr = out.data.data() + r * L;
        double mx = kNegInf;
        int64_t visible = 0;
        for (int64_t j = 0; j < L; ++j)
            if (!mr || mr[j] == 0.0) {
                ++visible;
                mx = std::max(mx, xr[j]);
            }
        if (visible == 0)
            throw MaskError("masked_softmax: fully masked row " + std::to_string(r));
        if (!std::isfinite(mx))
            throw DivergenceError("softmax: non-finite logits in row " + std::to_string(r));
        double sum = 0.0;
        for (int64_t j = 0; j < L; ++j) {
            if (!mr || mr[j] == 0.0) {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            } else {
                yr[j] = 0.0;
            }
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < L; ++j) yr[j] *= inv;
    }
    return out;
}

inline std::function<void(Node&)> softmax_backprop(Node* nx, int64_t L) {
    return [nx, L](Node& self) {
        const int64_t rows = self.value.size() / L;
        double* dx = grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        const double* y = self.value.data.data();
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = y + r * L;
            const double* gr = g + r * L;
            double dot = 0.0;
            for (int64_t j = 0; j < L; ++j) dot += gr[j] * yr[j];
            double* dr = dx + r * L;
            for (int64_t j = 0; j < L; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    };
}

} // namespace detail

// Softmax over the last axis with an additive {0,-inf} mask; masked positions
// come out exactly 0 and each row sums to 1 over the visible ones.
inline Var masked_softmax(const Var& logits, const Var& mask) {
    Tensor out = detail::softmax_forward(logits.value(), &mask.value());
    return detail::make_node(std::move(out), {logits},
                             detail::softmax_backprop(logits.node(), logits.dim(-1)));
}

inline Var softmax(const Var& logits) {
    Tensor out = detail::softmax_forward(logits.value(), nullptr);
    return detail::make_node(std::move(out), {logits},
                             detail::softmax_backprop(logits.node(), logits.dim(-1)));
}

// Per-row normalization over the channel (last) axis followed by the affine
// transform gain * xhat + bias.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    const int64_t D = x.dim(-1);
    if (gain.size() != D || bias.size() != D)
        throw ShapeError("layer_norm: gain/bias length vs channels " + shape_str(x.shape()));
    const int64_t rows = x.size() / D;
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    Tensor inv_std({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.value().data.data() + r * D;
        double mean = 0.0;
        for (int64_t j = 0; j < D; ++j) mean += xr[j];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(D);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std.data[r] = inv;
        double* hr = xhat.data.data() + r * D;
        double* yr = out.data.data() + r * D;
        for (int64_t j = 0; j < D; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            yr[j] = gain.value().data[j] * hr[j] + bias.value().data[j];
        }
    }
    detail::Node* nx = x.node();
    detail::Node* ng = gain.node();
    detail::Node* nb = bias.node();
    return detail::make_node(
        std::move(out), {x, gain, bias},
        [nx, ng, nb, D, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            const double* g = self.grad.data.data();
            if (ng->requires_grad) {
                double* dg = detail::grad_buffer(*ng).data.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < D; ++j) dg[j] += g[r * D + j] * xhat.data[r * D + j];
            }
            if (nb->requires_grad) {
                double* db = detail::grad_buffer(*nb).data.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < D; ++j) db[j] += g[r * D + j];
            }
            if (nx->requires_grad) {
                double* dx = detail::grad_buffer(*nx).data.data();
                const double* gamma = ng->value.data.data();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* gr = g + r * D;
                    const double* hr = xhat.data.data() + r * D;
                    double mean_dh = 0.0, mean_dhh = 0.0;
                    for (int64_t j = 0; j < D; ++j) {
                        const double dh = gr[j] * gamma[j];
                        mean_dh += dh;
                        mean_dhh += dh * hr[j];
                    }
                    mean_dh /= static_cast<double>(D);
                    mean_dhh /= static_cast<double>(D);
                    const double inv = inv_std.data[r];
                    double* dr = dx + r * D;
                    for (int64_t j = 0; j < D; ++j) {
                        const double dh = gr[j] * gamma[j];
                        dr[j] += inv * (dh - mean_dh - hr[j] * mean_dhh);
                    }
                }
            }
        });
}

namespace detail {

struct AxisDims {
    int64_t outer, axis_n, inner;
};

inline AxisDims axis_dims(const Shape& s, int64_t axis, const char* op) {
    if (axis < 0) axis += static_cast<int64_t>(s.size());
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
        throw IndexError(std::string(op) + ": axis out of range for " + shape_str(s));
    AxisDims d{1, s[static_cast<size_t>(axis)], 1};
    for (int64_t i = 0; i < axis; ++i) d.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) d.inner *= s[i];
    return d;
}

inline Shape drop_axis(const Shape& s, int64_t axis) {
    if (axis < 0) axis += static_cast<int64_t>(s.size());
    Shape out;
    for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i)
        if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
    if (out.empty()) out.push_back(1);
    return out;
}

inline Var reduce_axis(const Var& x, int64_t axis, bool mean, const char* op) {
    auto d = axis_dims(x.shape(), axis, op);
    Tensor out(drop_axis(x.shape(), axis));
    const double w = mean ? 1.0 / static_cast<double>(d.axis_n) : 1.0;
    const double* xp = x.value().data.data();
    for (int64_t o = 0; o < d.outer; ++o)
        for (int64_t a = 0; a < d.axis_n; ++a) {
            const double* src = xp + (o * d.axis_n + a) * d.inner;
            double* dst = out.data.data() + o * d.inner;
            for (int64_t i = 0; i < d.inner; ++i) dst[i] += w * src[i];
        }
    Node* nx = x.node();
    return make_node(std::move(out), {x}, [nx, d, w](Node& self) {
        double* dx = grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t o = 0; o < d.outer; ++o)
            for (int64_t a = 0; a < d.axis_n; ++a) {
                double* dst = dx + (o * d.axis_n + a) * d.inner;
                const double* src = g + o * d.inner;
                for (int64_t i = 0; i < d.inner; ++i) dst[i] += w * src[i];
            }
    });
}

} // namespace detail

inline Var mean_over_axis(const Var& x, int64_t axis) {
    return detail::reduce_axis(x, axis, true, "mean_over_axis");
}

inline Var sum_over_axis(const Var& x, int64_t axis) {
    return detail::reduce_axis(x, axis, false, "sum_over_axis");
}

inline Var sum_all(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data) s += v;
    detail::Node* nx = x.node();
    const int64_t n = x.size();
    return detail::make_node(Tensor::scalar(s), {x}, [nx, n](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double g = self.grad.data[0];
        for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
}

inline Var slice(const Var& x, int64_t axis, int64_t begin, int64_t end) {
    auto d = detail::axis_dims(x.shape(), axis, "slice");
    if (begin < 0 || end > d.axis_n || begin >= end)
        throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for axis size " + std::to_string(d.axis_n));
    Shape os = x.shape();
    const int64_t ax = axis < 0 ? axis + x.rank() : axis;
    os[static_cast<size_t>(ax)] = end - begin;
    Tensor out(os);
    const int64_t len = end - begin;
    const double* xp = x.value().data.data();
    for (int64_t o = 0; o < d.outer; ++o)
        std::copy_n(xp + (o * d.axis_n + begin) * d.inner, len * d.inner,
                    out.data.data() + o * len * d.inner);
    detail::Node* nx = x.node();
    return detail::make_node(std::move(out), {x}, [nx, d, begin, len](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t o = 0; o < d.outer; ++o) {
            double* dst = dx + (o * d.axis_n + begin) * d.inner;
            const double* src = g + o * len * d.inner;
            for (int64_t i = 0; i < len * d.inner; ++i) dst[i] += src[i];
        }
    });
}

inline Var concat(const std::vector<Var>& parts, int64_t axis) {
    if (parts.empty()) throw ContractError("concat: no parts");
    const Shape& first = parts[0].shape();
    const int64_t ax = axis < 0 ? axis + parts[0].rank() : axis;
    int64_t total_axis = 0;
    for (const Var& p : parts) {
        if (p.rank() != parts[0].rank())
            throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
        for (int64_t i = 0; i < p.rank(); ++i)
            if (i != ax && p.dim(i) != first[static_cast<size_t>(i)])
                throw ShapeError("concat: shapes " + shape_str(first) + " vs " + shape_str(p.shape()));
        total_axis += p.dim(ax);
    }
    Shape os = first;
    os[static_cast<size_t>(ax)] = total_axis;
    auto d = detail::axis_dims(os, ax, "concat");
    Tensor out(os);
    std::vector<int64_t> lens;
    int64_t pos = 0;
    for (const Var& p : parts) {
        const int64_t len = p.dim(ax);
        lens.push_back(len);
        const double* xp = p.value().data.data();
        for (int64_t o = 0; o < d.outer; ++o)
            std::copy_n(xp + o * len * d.inner, len * d.inner,
                        out.data.data() + (o * total_axis + pos) * d.inner);
        pos += len;
    }
    std::vector<detail::Node*> nodes;
    for (const Var& p : parts) nodes.push_back(p.node());
    return detail::make_node(std::move(out), parts,
                             [nodes, lens = std::move(lens), d](detail::Node& self) {
                                 const double* g = self.grad.data.data();
                                 int64_t pos = 0;
                                 for (size_t pi = 0; pi < nodes.size(); ++pi) {
                                     const int64_t len = lens[pi];
                                     if (nodes[pi]->requires_grad) {
                                         double* dx = detail::grad_buffer(*nodes[pi]).data.data();
                                         for (int64_t o = 0; o < d.outer; ++o) {
                                             const double* src = g + (o * d.axis_n + pos) * d.inner;
                                             double* dst = dx + o * len * d.inner;
                                             for (int64_t i = 0; i < len * d.inner; ++i) dst[i] += src[i];
                                         }
                                     }
                                     pos += len;
                                 }
                             });
}

inline Var reshape(const Var& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor out(std::move(new_shape), x.value().data);
    detail::Node* nx = x.node();
    const int64_t n = x.size();
    return detail::make_node(std::move(out), {x}, [nx, n](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
}

// [T, H*dh] -> [H, T, dh]
inline Var split_heads(const Var& x, int64_t heads) {
    if (x.rank() != 2 || x.dim(1) % heads != 0)
        throw ShapeError("split_heads: " + shape_str(x.shape()) + " with " + std::to_string(heads) +
                         " heads");
    const int64_t T = x.dim(0), D = x.dim(1), dh = D / heads;
    Tensor out({heads, T, dh});
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t t = 0; t < T; ++t)
            std::copy_n(x.value().data.data() + t * D + h * dh, dh,
                        out.data.data() + (h * T + t) * dh);
    detail::Node* nx = x.node();
    return detail::make_node(std::move(out), {x}, [nx, heads, T, D, dh](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < T; ++t)
                kernel::axpy(1.0, g + (h * T + t) * dh, dx + t * D + h * dh, dh);
    });
}

// [H, T, dh] -> [T, H*dh]
inline Var merge_heads(const Var& x) {
    if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
    const int64_t H = x.dim(0), T = x.dim(1), dh = x.dim(2), D = H * dh;
    Tensor out({T, D});
    for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < T; ++t)
            std::copy_n(x.value().data.data() + (h * T + t) * dh, dh,
                        out.data.data() + t * D + h * dh);
    detail::Node* nx = x.node();
    return detail::make_node(std::move(out), {x}, [nx, H, T, dh, D](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t h = 0; h < H; ++h)
            for (int64_t t = 0; t < T; ++t)
                kernel::axpy(1.0, g + t * D + h * dh, dx + (h * T + t) * dh, dh);
    });
}

// Repeats row k of x `lens[k]` times along axis 0 (the upsampling that copies
// one per-window value to every token of that window).
inline Var upsample_spans(const Var& x, const std::vector<int64_t>& lens) {
    if (x.dim(0) != static_cast<int64_t>(lens.size()))
        throw PartitionError("upsample_spans: " + std::to_string(lens.size()) + " spans vs " +
                             std::to_string(x.dim(0)) + " rows");
    const int64_t inner = x.size() / x.dim(0);
    int64_t total = 0;
    for (int64_t l : lens) {
        if (l < 1) throw PartitionError("upsample_spans: empty span");
        total += l;
    }
    Shape os = x.shape();
    os[0] = total;
    Tensor out(os);
    int64_t row = 0;
    for (size_t k = 0; k < lens.size(); ++k)
        for (int64_t r = 0; r < lens[k]; ++r, ++row)
            std::copy_n(x.value().data.data() + static_cast<int64_t>(k) * inner, inner,
                        out.data.data() + row * inner);
    detail::Node* nx = x.node();
    return detail::make_node(std::move(out), {x}, [nx, lens, inner](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        int64_t row = 0;
        for (size_t k = 0; k < lens.size(); ++k)
            for (int64_t r = 0; r < lens[k]; ++r, ++row)
                kernel::axpy(1.0, g + row * inner, dx + static_cast<int64_t>(k) * inner, inner);
    });
}

// Mean cross entropy with stable log-softmax; gradient w.r.t. logits is
// (softmax - onehot) / batch.
inline Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: logits must be [batch, classes], got " + shape_str(logits.shape()));
    const int64_t B = logits.dim(0), C = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                            std::to_string(B));
    Tensor probs({B, C});
    double loss = 0.0;
    for (int64_t i = 0; i < B; ++i) {
        const int lab = labels[static_cast<size_t>(i)];
        if (lab < 0 || lab >= C)
            throw ContractError("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                                std::to_string(C) + ")");
        const double* lr = logits.value().data.data() + i * C;
        double mx = lr[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, lr[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) sum += std::exp(lr[c] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - lr[lab];
        double* pr = probs.data.data() + i * C;
        for (int64_t c = 0; c < C; ++c) pr[c] = std::exp(lr[c] - lse);
    }
    loss /= static_cast<double>(B);
    detail::Node* nl = logits.node();
    return detail::make_node(Tensor::scalar(loss), {logits},
                             [nl, labels, B, C, probs = std::move(probs)](detail::Node& self) {
                                 double* dl = detail::grad_buffer(*nl).data.data();
                                 const double g = self.grad.data[0] / static_cast<double>(B);
                                 for (int64_t i = 0; i < B; ++i) {
                                     const double* pr = probs.data.data() + i * C;
                                     double* dr = dl + i * C;
                                     for (int64_t c = 0; c < C; ++c) dr[c] += g * pr[c];
                                     dr[labels[static_cast<size_t>(i)]] -= g;
                                 }
                             });
}

// Inverted dropout; identity (and recorded as nothing) when rate == 0.
inline Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
    const int64_t n = x.size();
    Tensor mask(x.shape());
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    for (int64_t i = 0; i < n; ++i) mask.data[i] = keep(rng) ? inv : 0.0;
    Tensor out(x.shape());
    for (int64_t i = 0; i < n; ++i) out.data[i] = x.value().data[i] * mask.data[i];
    detail::Node* nx = x.node();
    return detail::make_node(std::move(out), {x}, [nx, n, mask = std::move(mask)](detail::Node& self) {
        double* dx = detail::grad_buffer(*nx).data.data();
        const double* g = self.grad.data.data();
        for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * mask.data[i];
    });
}

} // namespace dwformer
