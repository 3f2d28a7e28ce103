// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode automatic differentiation.
//
// Graphs are define-by-run: every op allocates a node holding its output
// value, links to its parents, and registers a backward closure. backward()
// topologically sorts the subgraph that needs gradients and runs the
// closures in reverse. Nodes that do not need gradients drop their parent
// links, so no-grad forwards (e.g. a frozen teacher) free activations as
// soon as the handles go out of scope.
//
// All kernels are single-threaded with a fixed accumulation order, so a
// given build produces bit-identical results run to run.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "neo/errors.hpp"

namespace neo {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

template <class S>
struct TensorNode {
    static_assert(std::is_floating_point_v<S>);
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // allocated lazily; same length as value once present
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward;

    std::vector<S>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
        return grad;
    }
};

template <class S>
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.n_ = std::make_shared<TensorNode<S>>();
        t.n_->shape = std::move(shape);
        t.n_->value.assign(static_cast<size_t>(numel(t.n_->shape)), S(0));
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != numel(shape)) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        Tensor t = leaf(std::move(shape), requires_grad);
        t.n_->value = std::move(data);
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from(Shape{}, std::vector<S>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(n_->value.size()); }

    S* data() { return n_->value.data(); }
    const S* data() const { return n_->value.data(); }
    std::vector<S>& values() { return n_->value; }
    const std::vector<S>& values() const { return n_->value; }

    S item() const {
        if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<S>& grad() { return n_->ensure_grad(); }
    const std::vector<S>& grad() const { return n_->grad; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
    }

    const char* op() const { return n_->op; }
    const std::shared_ptr<TensorNode<S>>& node() const { return n_; }

private:
    std::shared_ptr<TensorNode<S>> n_;
};

// ---------------------------------------------------------------------------
// kernels

namespace detail {

// C[m,n] += A[m,k] * B[k,n]. ikj order: the inner j loop is contiguous in
// both C and B and vectorizes without reassociating any reduction.
template <class S>
void gemm_acc(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        const S* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            const S* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
void transpose_into(S* dst, const S* src, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

template <class S>
std::vector<S>& scratch_buffer(size_t which, size_t len) {
    static thread_local std::vector<S> bufs[2];
    auto& b = bufs[which];
    if (b.size() < len) b.resize(len);
    return b;
}

inline int64_t leading_product(const Shape& s, size_t keep_last) {
    int64_t n = 1;
    for (size_t i = 0; i + keep_last < s.size(); ++i) n *= s[i];
    return n;
}

template <class S>
Tensor<S> make_result(Shape shape, std::vector<S> value,
                      std::vector<std::shared_ptr<TensorNode<S>>> parents,
                      const char* op, std::function<void(TensorNode<S>&)> backward) {
    Tensor<S> out = Tensor<S>::from(std::move(shape), std::move(value));
    auto& n = *out.node();
    n.op = op;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        n.requires_grad = true;
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    return out;
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<S> v(a.values());
    const S* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] += pb[i];
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node(), b.node()}, "add", [](TensorNode<S>& n) {
            for (int side = 0; side < 2; ++side) {
                auto& p = *n.parents[static_cast<size_t>(side)];
                if (!p.requires_grad) continue;
                auto& g = p.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
        });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<S> v(a.values());
    const S* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= pb[i];
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node(), b.node()}, "sub", [](TensorNode<S>& n) {
            auto& a0 = *n.parents[0];
            auto& b0 = *n.parents[1];
            if (a0.requires_grad) {
                auto& g = a0.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
            if (b0.requires_grad) {
                auto& g = b0.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
            }
        });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<S> v(a.values());
    const S* pb = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= pb[i];
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node(), b.node()}, "mul", [](TensorNode<S>& n) {
            auto& a0 = *n.parents[0];
            auto& b0 = *n.parents[1];
            if (a0.requires_grad) {
                auto& g = a0.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b0.value[i];
            }
            if (b0.requires_grad) {
                auto& g = b0.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a0.value[i];
            }
        });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> v(a.values());
    for (auto& x : v) x *= c;
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node()}, "scale", [c](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c;
        });
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
    std::vector<S> v(a.values());
    for (auto& x : v) x = std::log(x);
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node()}, "log", [](TensorNode<S>& n) {
            auto& p = *n.parents[0];
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / p.value[i];
        });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
    constexpr double inv_sqrt2 = 0.7071067811865476;
    std::vector<S> v(a.values());
    for (auto& x : v) {
        const double xd = static_cast<double>(x);
        x = static_cast<S>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
    }
    return detail::make_result<S>(
        a.shape(), std::move(v), {a.node()}, "gelu", [](TensorNode<S>& n) {
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            auto& p = *n.parents[0];
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                const double x = static_cast<double>(p.value[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                g[i] += n.grad[i] * static_cast<S>(cdf + x * pdf);
            }
        });
}

// ---------------------------------------------------------------------------
// matmul family
//
// matmul:    [..., m, k] x [k, n]       -> [..., m, n]   (shared rhs)
//            [..., m, k] x [..., k, n]  -> [..., m, n]   (batched rhs)
// matmul_nt: [..., m, k] x [n, k]       -> [..., m, n]   (rhs transposed)
//            [..., m, k] x [..., n, k]  -> [..., m, n]

namespace detail {

inline void check_matmul_dims(const Shape& a, const Shape& b, bool nt, const char* op) {
    if (a.size() < 2 || b.size() < 2) {
        throw DimensionError(std::string(op) + ": operands must have >= 2 dims: " +
                             shape_str(a) + " vs " + shape_str(b));
    }
    const int64_t ak = a.back();
    const int64_t bk = nt ? b.back() : b[b.size() - 2];
    if (ak != bk) {
        throw DimensionError(std::string(op) + ": inner dimensions disagree: " + shape_str(a) +
                             " vs " + shape_str(b));
    }
    if (b.size() > 2) {
        if (b.size() != a.size() ||
            !std::equal(a.begin(), a.end() - 2, b.begin())) {
            throw DimensionError(std::string(op) + ": batch dimensions disagree: " +
                                 shape_str(a) + " vs " + shape_str(b));
        }
    }
}

} // namespace detail

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_matmul_dims(a.shape(), b.shape(), false, "matmul");
    const int64_t k = a.shape().back();
    const int64_t m = a.shape()[a.shape().size() - 2];
    const int64_t n = b.shape().back();
    const bool batched_b = b.ndim() > 2;
    const int64_t batch = detail::leading_product(a.shape(), 2);

    Shape out_shape(a.shape());
    out_shape.back() = n;
    std::vector<S> v(static_cast<size_t>(batch * m * n), S(0));
    if (batched_b) {
        for (int64_t bi = 0; bi < batch; ++bi) {
            detail::gemm_acc(v.data() + bi * m * n, a.data() + bi * m * k,
                             b.data() + bi * k * n, m, k, n);
        }
    } else {
        detail::gemm_acc(v.data(), a.data(), b.data(), batch * m, k, n);
    }

    return detail::make_result<S>(
        out_shape, std::move(v), {a.node(), b.node()}, "matmul",
        [m, k, n, batch, batched_b](TensorNode<S>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const S* g = node.grad.data();
            if (pa.requires_grad) {
                // dA = g . B^T
                auto& bt = detail::scratch_buffer<S>(0, static_cast<size_t>(k * n));
                auto& ga = pa.ensure_grad();
                if (batched_b) {
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        detail::transpose_into(bt.data(), pb.value.data() + bi * k * n, k, n);
                        detail::gemm_acc(ga.data() + bi * m * k, g + bi * m * n, bt.data(), m, n, k);
                    }
                } else {
                    detail::transpose_into(bt.data(), pb.value.data(), k, n);
                    detail::gemm_acc(ga.data(), g, bt.data(), batch * m, n, k);
                }
            }
            if (pb.requires_grad) {
                // dB = A^T . g, summed over batch when the rhs is shared
                auto& gb = pb.ensure_grad();
                if (batched_b) {
                    auto& at = detail::scratch_buffer<S>(1, static_cast<size_t>(m * k));
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        detail::transpose_into(at.data(), pa.value.data() + bi * m * k, m, k);
                        detail::gemm_acc(gb.data() + bi * k * n, at.data(), g + bi * m * n, k, m, n);
                    }
                } else {
                    auto& at = detail::scratch_buffer<S>(1, static_cast<size_t>(batch * m * k));
                    detail::transpose_into(at.data(), pa.value.data(), batch * m, k);
                    detail::gemm_acc(gb.data(), at.data(), g, k, batch * m, n);
                }
            }
        });
}

template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_matmul_dims(a.shape(), b.shape(), true, "matmul_nt");
    const int64_t k = a.shape().back();
    const int64_t m = a.shape()[a.shape().size() - 2];
    const int64_t n = b.shape()[b.shape().size() - 2];
    const bool batched_b = b.ndim() > 2;
    const int64_t batch = detail::leading_product(a.shape(), 2);

    Shape out_shape(a.shape());
    out_shape.back() = n;
    std::vector<S> v(static_cast<size_t>(batch * m * n), S(0));
    {
        auto& bt = detail::scratch_buffer<S>(0, static_cast<size_t>(n * k));
        if (batched_b) {
            for (int64_t bi = 0; bi < batch; ++bi) {
                detail::transpose_into(bt.data(), b.data() + bi * n * k, n, k);
                detail::gemm_acc(v.data() + bi * m * n, a.data() + bi * m * k, bt.data(), m, k, n);
            }
        } else {
            detail::transpose_into(bt.data(), b.data(), n, k);
            detail::gemm_acc(v.data(), a.data(), bt.data(), batch * m, k, n);
        }
    }

    return detail::make_result<S>(
        out_shape, std::move(v), {a.node(), b.node()}, "matmul_nt",
        [m, k, n, batch, batched_b](TensorNode<S>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const S* g = node.grad.data();
            if (pa.requires_grad) {
                // dA = g . B
                auto& ga = pa.ensure_grad();
                if (batched_b) {
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        detail::gemm_acc(ga.data() + bi * m * k, g + bi * m * n,
                                         pb.value.data() + bi * n * k, m, n, k);
                    }
                } else {
                    detail::gemm_acc(ga.data(), g, pb.value.data(), batch * m, n, k);
                }
            }
            if (pb.requires_grad) {
                // dB = g^T . A, summed over batch when the rhs is shared
                auto& gb = pb.ensure_grad();
                if (batched_b) {
                    auto& gt = detail::scratch_buffer<S>(1, static_cast<size_t>(m * n));
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        detail::transpose_into(gt.data(), g + bi * m * n, m, n);
                        detail::gemm_acc(gb.data() + bi * n * k, gt.data(),
                                         pa.value.data() + bi * m * k, n, m, k);
                    }
                } else {
                    auto& gt = detail::scratch_buffer<S>(1, static_cast<size_t>(batch * m * n));
                    detail::transpose_into(gt.data(), g, batch * m, n);
                    detail::gemm_acc(gb.data(), gt.data(), pa.value.data(), n, batch * m, k);
                }
            }
        });
}

// Swap the last two axes (batched over leading axes).
template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.ndim() < 2) throw DimensionError("transpose: need >= 2 dims, got " + shape_str(a.shape()));
    const int64_t rows = a.shape()[a.shape().size() - 2];
    const int64_t cols = a.shape().back();
    const int64_t batch = detail::leading_product(a.shape(), 2);
    Shape out_shape(a.shape());
    std::swap(out_shape[out_shape.size() - 2], out_shape.back());
    std::vector<S> v(a.values().size());
    for (int64_t bi = 0; bi < batch; ++bi) {
        detail::transpose_into(v.data() + bi * rows * cols, a.data() + bi * rows * cols, rows, cols);
    }
    return detail::make_result<S>(
        out_shape, std::move(v), {a.node()}, "transpose", [rows, cols, batch](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (int64_t bi = 0; bi < batch; ++bi) {
                const S* gsrc = n.grad.data() + bi * rows * cols;
                S* gdst = g.data() + bi * rows * cols;
                for (int64_t r = 0; r < cols; ++r) {
                    for (int64_t c = 0; c < rows; ++c) gdst[c * cols + r] += gsrc[r * rows + c];
                }
            }
        });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
    if (numel(new_shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape));
    }
    std::vector<S> v(a.values());
    return detail::make_result<S>(
        std::move(new_shape), std::move(v), {a.node()}, "reshape", [](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        });
}

// Columns [start, start+len) of the last axis.
template <class S>
Tensor<S> slice_last(const Tensor<S>& a, int64_t start, int64_t len) {
    const int64_t w = a.shape().back();
    if (start < 0 || len < 1 || start + len > w) {
        throw DimensionError("slice_last: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for " +
                             shape_str(a.shape()));
    }
    const int64_t rows = detail::leading_product(a.shape(), 1);
    Shape out_shape(a.shape());
    out_shape.back() = len;
    std::vector<S> v(static_cast<size_t>(rows * len));
    for (int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * w + start, len, v.data() + r * len);
    }
    return detail::make_result<S>(
        out_shape, std::move(v), {a.node()}, "slice_last",
        [rows, w, start, len](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* gs = n.grad.data() + r * len;
                S* gd = g.data() + r * w + start;
                for (int64_t j = 0; j < len; ++j) gd[j] += gs[j];
            }
        });
}

template <class S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw UsageError("concat_last: no inputs");
    Shape lead(parts[0].shape());
    lead.pop_back();
    int64_t total = 0;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        Shape l(p.shape());
        const int64_t w = l.back();
        l.pop_back();
        if (l != lead) {
            throw DimensionError("concat_last: leading dims disagree: " +
                                 shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        widths.push_back(w);
        total += w;
    }
    const int64_t rows = numel(lead);
    Shape out_shape(lead);
    out_shape.push_back(total);
    std::vector<S> v(static_cast<size_t>(rows * total));
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const int64_t w = widths[pi];
        const S* src = parts[pi].data();
        for (int64_t r = 0; r < rows; ++r) std::copy_n(src + r * w, w, v.data() + r * total + off);
        off += w;
    }
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    return detail::make_result<S>(
        out_shape, std::move(v), std::move(parents), "concat_last",
        [rows, total, widths](TensorNode<S>& n) {
            int64_t off2 = 0;
            for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                const int64_t w = widths[pi];
                auto& p = *n.parents[pi];
                if (p.requires_grad) {
                    auto& g = p.ensure_grad();
                    for (int64_t r = 0; r < rows; ++r) {
                        const S* gs = n.grad.data() + r * total + off2;
                        S* gd = g.data() + r * w;
                        for (int64_t j = 0; j < w; ++j) gd[j] += gs[j];
                    }
                }
                off2 += w;
            }
        });
}

// ---------------------------------------------------------------------------
// gathers

// Row gather: out[i, :] = table[ids[i], :], with scatter-add backward.
// out_lead gives the leading shape of the result (product must equal ids size).
template <class S>
Tensor<S> embedding(const Tensor<S>& table, std::span<const int32_t> ids, Shape out_lead) {
    if (table.ndim() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    const int64_t v = table.dim(0);
    const int64_t d = table.dim(1);
    if (numel(out_lead) != static_cast<int64_t>(ids.size())) {
        throw DimensionError("embedding: id count " + std::to_string(ids.size()) +
                             " does not match leading shape " + shape_str(out_lead));
    }
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            throw DataError("embedding: id " + std::to_string(ids[i]) + " out of range [0, " +
                            std::to_string(v) + ") at position " + std::to_string(i));
        }
    }
    Shape out_shape(out_lead);
    out_shape.push_back(d);
    std::vector<S> out(static_cast<size_t>(static_cast<int64_t>(ids.size()) * d));
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.data() + static_cast<int64_t>(ids[i]) * d, d,
                    out.data() + static_cast<int64_t>(i) * d);
    }
    std::vector<int32_t> ids_copy(ids.begin(), ids.end());
    return detail::make_result<S>(
        out_shape, std::move(out), {table.node()}, "embedding",
        [d, ids_copy = std::move(ids_copy)](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                const S* gs = n.grad.data() + static_cast<int64_t>(i) * d;
                S* gd = g.data() + static_cast<int64_t>(ids_copy[i]) * d;
                for (int64_t j = 0; j < d; ++j) gd[j] += gs[j];
            }
        });
}

// Pick one entry along the last axis per leading index: out[i] = x[i, ids[i]].
template <class S>
Tensor<S> take_last(const Tensor<S>& x, std::span<const int32_t> ids) {
    const int64_t w = x.shape().back();
    const int64_t rows = detail::leading_product(x.shape(), 1);
    if (rows != static_cast<int64_t>(ids.size())) {
        throw DimensionError("take_last: id count " + std::to_string(ids.size()) +
                             " does not match rows of " + shape_str(x.shape()));
    }
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= w) {
            throw DataError("take_last: id " + std::to_string(ids[i]) + " out of range [0, " +
                            std::to_string(w) + ") at row " + std::to_string(i));
        }
    }
    Shape out_shape(x.shape());
    out_shape.pop_back();
    std::vector<S> out(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) out[static_cast<size_t>(i)] = x.data()[i * w + ids[static_cast<size_t>(i)]];
    std::vector<int32_t> ids_copy(ids.begin(), ids.end());
    return detail::make_result<S>(
        out_shape, std::move(out), {x.node()}, "take_last",
        [w, ids_copy = std::move(ids_copy)](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                g[static_cast<size_t>(static_cast<int64_t>(i) * w + ids_copy[i])] += n.grad[i];
            }
        });
}

// Scale each last-axis row of x by the matching entry of w (leading shapes equal).
template <class S>
Tensor<S> mul_rowwise(const Tensor<S>& x, const Tensor<S>& w) {
    const int64_t width = x.shape().back();
    const int64_t rows = detail::leading_product(x.shape(), 1);
    if (rows != w.size()) {
        throw DimensionError("mul_rowwise: weight count " + shape_str(w.shape()) +
                             " does not match rows of " + shape_str(x.shape()));
    }
    std::vector<S> v(x.values());
    for (int64_t r = 0; r < rows; ++r) {
        const S c = w.data()[r];
        S* row = v.data() + r * width;
        for (int64_t j = 0; j < width; ++j) row[j] *= c;
    }
    return detail::make_result<S>(
        x.shape(), std::move(v), {x.node(), w.node()}, "mul_rowwise",
        [rows, width](TensorNode<S>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const S c = pw.value[static_cast<size_t>(r)];
                    const S* gs = n.grad.data() + r * width;
                    S* gd = g.data() + r * width;
                    for (int64_t j = 0; j < width; ++j) gd[j] += gs[j] * c;
                }
            }
            if (pw.requires_grad) {
                auto& g = pw.ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const S* gs = n.grad.data() + r * width;
                    const S* xs = px.value.data() + r * width;
                    S acc = S(0);
                    for (int64_t j = 0; j < width; ++j) acc += gs[j] * xs[j];
                    g[static_cast<size_t>(r)] += acc;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// normalization, masking, softmax

template <class S>
Tensor<S> rmsnorm(const Tensor<S>& x, const Tensor<S>& gain, S eps = S(1e-5)) {
    const int64_t d = x.shape().back();
    if (gain.ndim() != 1 || gain.dim(0) != d) {
        throw DimensionError("rmsnorm: gain " + shape_str(gain.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    const int64_t rows = detail::leading_product(x.shape(), 1);
    std::vector<S> v(x.values().size());
    for (int64_t r = 0; r < rows; ++r) {
        const S* xs = x.data() + r * d;
        S m = S(0);
        for (int64_t j = 0; j < d; ++j) m += xs[j] * xs[j];
        const S inv = S(1) / std::sqrt(m / static_cast<S>(d) + eps);
        S* out = v.data() + r * d;
        for (int64_t j = 0; j < d; ++j) out[j] = xs[j] * inv * gain.data()[j];
    }
    return detail::make_result<S>(
        x.shape(), std::move(v), {x.node(), gain.node()}, "rmsnorm",
        [rows, d, eps](TensorNode<S>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            for (int64_t r = 0; r < rows; ++r) {
                const S* xs = px.value.data() + r * d;
                const S* gy = n.grad.data() + r * d;
                S m = S(0);
                for (int64_t j = 0; j < d; ++j) m += xs[j] * xs[j];
                const S inv = S(1) / std::sqrt(m / static_cast<S>(d) + eps);
                if (pg.requires_grad) {
                    auto& gg = pg.ensure_grad();
                    for (int64_t j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += gy[j] * xs[j] * inv;
                }
                if (px.requires_grad) {
                    auto& gx = px.ensure_grad();
                    S dot = S(0);
                    for (int64_t j = 0; j < d; ++j) dot += gy[j] * pg.value[static_cast<size_t>(j)] * xs[j];
                    const S k = inv * inv * inv * dot / static_cast<S>(d);
                    S* gxr = gx.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        gxr[j] += gy[j] * pg.value[static_cast<size_t>(j)] * inv - k * xs[j];
                    }
                }
            }
        });
}

// Causal attention masking on [..., T, T] score grids: entries above the
// diagonal become -inf so softmax assigns them zero probability.
template <class S>
Tensor<S> causal_mask(const Tensor<S>& scores) {
    if (scores.ndim() < 2 || scores.shape().back() != scores.shape()[scores.shape().size() - 2]) {
        throw DimensionError("causal_mask: need [..., T, T] scores, got " + shape_str(scores.shape()));
    }
    const int64_t t = scores.shape().back();
    const int64_t batch = detail::leading_product(scores.shape(), 2);
    const S neg_inf = -std::numeric_limits<S>::infinity();
    std::vector<S> v(scores.values());
    for (int64_t bi = 0; bi < batch; ++bi) {
        S* grid = v.data() + bi * t * t;
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t j = i + 1; j < t; ++j) grid[i * t + j] = neg_inf;
        }
    }
    return detail::make_result<S>(
        scores.shape(), std::move(v), {scores.node()}, "causal_mask",
        [t, batch](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (int64_t bi = 0; bi < batch; ++bi) {
                const S* gs = n.grad.data() + bi * t * t;
                S* gd = g.data() + bi * t * t;
                for (int64_t i = 0; i < t; ++i) {
                    for (int64_t j = 0; j <= i; ++j) gd[i * t + j] += gs[i * t + j];
                }
            }
        });
}

namespace detail {

template <class S>
void softmax_span(S* out, const S* in, int64_t len, int64_t stride) {
    S mx = in[0];
    for (int64_t i = 1; i < len; ++i) mx = std::max(mx, in[i * stride]);
    S sum = S(0);
    for (int64_t i = 0; i < len; ++i) {
        const S e = std::exp(in[i * stride] - mx);
        out[i * stride] = e;
        sum += e;
    }
    const S inv = S(1) / sum;
    for (int64_t i = 0; i < len; ++i) out[i * stride] *= inv;
}

} // namespace detail

// Softmax along `axis` (negative counts from the end). Max-subtracted for
// stability; -inf inputs get exactly zero probability. Any NaN input is a
// numeric error.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                             shape_str(x.shape()));
    }
    for (const S v : x.values()) {
        if (std::isnan(v)) throw NumericError("softmax: non-finite input");
    }
    const int64_t len = x.dim(axis);
    int64_t inner = 1;
    for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
    const int64_t outer = x.size() / (len * inner);

    std::vector<S> v(x.values().size());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            detail::softmax_span(v.data() + base, x.data() + base, len, inner);
        }
    }
    return detail::make_result<S>(
        x.shape(), std::move(v), {x.node()}, "softmax",
        [len, inner, outer](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    const S* y = n.value.data() + base;
                    const S* gy = n.grad.data() + base;
                    S dot = S(0);
                    for (int64_t i = 0; i < len; ++i) dot += gy[i * inner] * y[i * inner];
                    S* gd = g.data() + base;
                    for (int64_t i = 0; i < len; ++i) {
                        gd[i * inner] += y[i * inner] * (gy[i * inner] - dot);
                    }
                }
            }
        });
}

// Log-softmax along the last axis (stable form; the losses build on this).
template <class S>
Tensor<S> log_softmax(const Tensor<S>& x) {
    const int64_t len = x.shape().back();
    const int64_t rows = detail::leading_product(x.shape(), 1);
    for (const S v : x.values()) {
        if (std::isnan(v)) throw NumericError("log_softmax: non-finite input");
    }
    std::vector<S> v(x.values().size());
    for (int64_t r = 0; r < rows; ++r) {
        const S* xs = x.data() + r * len;
        S mx = xs[0];
        for (int64_t i = 1; i < len; ++i) mx = std::max(mx, xs[i]);
        S sum = S(0);
        for (int64_t i = 0; i < len; ++i) sum += std::exp(xs[i] - mx);
        const S lse = mx + std::log(sum);
        S* out = v.data() + r * len;
        for (int64_t i = 0; i < len; ++i) out[i] = xs[i] - lse;
    }
    return detail::make_result<S>(
        x.shape(), std::move(v), {x.node()}, "log_softmax", [len, rows](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* lp = n.value.data() + r * len;
                const S* gy = n.grad.data() + r * len;
                S gsum = S(0);
                for (int64_t i = 0; i < len; ++i) gsum += gy[i];
                S* gd = g.data() + r * len;
                for (int64_t i = 0; i < len; ++i) gd[i] += gy[i] - std::exp(lp[i]) * gsum;
            }
        });
}

// ---------------------------------------------------------------------------
// reductions

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = S(0);
    for (const S v : x.values()) acc += v;
    return detail::make_result<S>(
        Shape{}, std::vector<S>{acc}, {x.node()}, "sum", [](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            const S gv = n.grad[0];
            for (auto& gi : g) gi += gv;
        });
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    if (x.size() == 0) throw UsageError("mean: empty tensor");
    S acc = S(0);
    for (const S v : x.values()) acc += v;
    const S inv = S(1) / static_cast<S>(x.size());
    return detail::make_result<S>(
        Shape{}, std::vector<S>{acc * inv}, {x.node()}, "mean", [inv](TensorNode<S>& n) {
            auto& g = n.parents[0]->ensure_grad();
            const S gv = n.grad[0] * inv;
            for (auto& gi : g) gi += gv;
        });
}

// ---------------------------------------------------------------------------
// backward

template <class S>
struct BackwardGraph {
    std::vector<TensorNode<S>*> order; // topological, root last
    TensorNode<S>* root = nullptr;
};

// Topologically sorts the gradient-carrying subgraph under `root`.
// Each reachable node appears exactly once.
template <class S>
BackwardGraph<S> build_backward_graph(const Tensor<S>& root) {
    BackwardGraph<S> g;
    g.root = root.node().get();
    if (!g.root->requires_grad) return g;
    std::unordered_set<TensorNode<S>*> visited;
    // Iterative post-order DFS; graphs can be deep at long sequence lengths.
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(g.root, 0);
    visited.insert(g.root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            TensorNode<S>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next >= node->parents.size()) {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every leaf that requires them; call zero_grad between steps.
template <class S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
        throw UsageError("backward: root must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    BackwardGraph<S> g = build_backward_graph(loss);
    loss.node()->ensure_grad()[0] += S(1);
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        TensorNode<S>* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

} // namespace neo
