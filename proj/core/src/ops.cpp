#include "ait/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ait/error.hpp"

namespace ait {

namespace {

GradTape* tracking(std::initializer_list<const Tensor*> inputs) {
    GradTape* tape = active_tape();
    if (!tape) return nullptr;
    for (const Tensor* t : inputs) {
        if (t && t->requires_grad()) return tape;
    }
    return nullptr;
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        Scalar* crow = c + i * n;
        const Scalar* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = arow[p];
            const Scalar* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* arow = a + i * k;
        const Scalar* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = arow[p];
            Scalar* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void transpose_into(const Scalar* src, Scalar* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[m x k] += A[m x n] * B[k x n]^T, via an explicit transpose of B.
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t n, std::size_t k,
             std::vector<Scalar>& scratch) {
    scratch.resize(k * n);
    transpose_into(b, scratch.data(), k, n);
    gemm_nn(a, scratch.data(), c, m, n, k);
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
    Shape out = shape;
    if (keepdim) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    return out;
}

// ---- broadcasting ---------------------------------------------------------

enum class BroadcastKind { same, suffix, general };

struct Broadcast {
    BroadcastKind kind = BroadcastKind::same;
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 when broadcast
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast plan;
    if (a == b) {
        plan.out = a;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    auto extent = [rank](const Shape& s, std::size_t i) -> std::size_t {
        const std::size_t off = rank - s.size();
        return i < off ? 1 : s[i - off];
    };
    for (std::size_t i = 0; i < rank; ++i) {
        const auto ea = extent(a, i), eb = extent(b, i);
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        plan.out[i] = std::max(ea, eb);
    }
    // b equal to a trailing block of a (bias / position rows): flat modulo indexing.
    if (plan.out == a && b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) {
        plan.kind = BroadcastKind::suffix;
        return plan;
    }
    plan.kind = BroadcastKind::general;
    auto strides = [&](const Shape& s) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = rank; i-- > 0;) {
            const auto e = extent(s, i);
            st[i] = e == 1 ? 0 : acc;
            acc *= e;
        }
        return st;
    };
    plan.stride_a = strides(a);
    plan.stride_b = strides(b);
    return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast& plan, std::size_t a_numel, std::size_t b_numel, F&& f) {
    const std::size_t n = shape_numel(plan.out);
    switch (plan.kind) {
        case BroadcastKind::same:
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        case BroadcastKind::suffix:
            for (std::size_t i = 0; i < n; ++i) f(i, i, i % b_numel);
            return;
        case BroadcastKind::general: {
            (void)a_numel;
            const std::size_t rank = plan.out.size();
            std::vector<std::size_t> idx(rank, 0);
            std::size_t ia = 0, ib = 0;
            for (std::size_t i = 0; i < n; ++i) {
                f(i, ia, ib);
                for (std::size_t d = rank; d-- > 0;) {
                    ++idx[d];
                    ia += plan.stride_a[d];
                    ib += plan.stride_b[d];
                    if (idx[d] < plan.out[d]) break;
                    ia -= plan.stride_a[d] * idx[d];
                    ib -= plan.stride_b[d] * idx[d];
                    idx[d] = 0;
                }
            }
            return;
        }
    }
}

// Shared skeleton for binary elementwise ops. da/db receive (a, b, out) values
// and return the local partial derivatives.
template <typename Fwd, typename Da, typename Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
    auto plan = plan_broadcast(a.shape(), b.shape(), name);
    Tensor out(plan.out);
    {
        const Scalar* pa = a.ptr();
        const Scalar* pb = b.ptr();
        Scalar* po = out.ptr();
        for_each_broadcast(plan, a.numel(), b.numel(),
                           [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
    }
    if (auto* tape = tracking({&a, &b})) {
        out.set_requires_grad();
        tape->record([a, b, out, plan = std::move(plan), da, db]() mutable {
            if (!out.has_grad()) return;
            const Scalar* pa = a.ptr();
            const Scalar* pb = b.ptr();
            const Scalar* po = out.ptr();
            const Scalar* g = out.grad().data();
            Scalar* ga = a.requires_grad() ? a.grad().data() : nullptr;
            Scalar* gb = b.requires_grad() ? b.grad().data() : nullptr;
            for_each_broadcast(plan, a.numel(), b.numel(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[i] * da(pa[ia], pb[ib], po[i]);
                if (gb) gb[ib] += g[i] * db(pa[ia], pb[ib], po[i]);
            });
        });
    }
    return out;
}

// Unary skeleton; d returns dy/dx from (x, y).
template <typename Fwd, typename D>
Tensor unary_op(const Tensor& a, Fwd fwd, D d) {
    Tensor out(a.shape());
    const Scalar* pa = a.ptr();
    Scalar* po = out.ptr();
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = fwd(pa[i]);
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, d]() mutable {
            if (!out.has_grad()) return;
            const Scalar* pa = a.ptr();
            const Scalar* po = out.ptr();
            const Scalar* g = out.grad().data();
            Scalar* ga = a.grad().data();
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * d(pa[i], po[i]);
        });
    }
    return out;
}

// Copies the gradient of `out` into `a` unchanged (same element order).
void record_identity_grad(const Tensor& a, const Tensor& out_in) {
    Tensor out = out_in;
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar, Scalar) { return Scalar(1); },
        [](Scalar, Scalar, Scalar) { return Scalar(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar, Scalar) { return Scalar(1); },
        [](Scalar, Scalar, Scalar) { return Scalar(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y, Scalar) { return y; },
        [](Scalar x, Scalar, Scalar) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](Scalar x, Scalar y) { return x / y; }, [](Scalar, Scalar y, Scalar) { return Scalar(1) / y; },
        [](Scalar, Scalar y, Scalar o) { return -o / y; });
}

Tensor scale(const Tensor& a, Scalar s) {
    return unary_op(a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
    return unary_op(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, [](Scalar x) { return std::sqrt(x); }, [](Scalar, Scalar y) { return Scalar(0.5) / y; });
}

Tensor square(const Tensor& a) {
    return unary_op(a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return 2 * x; });
}

Tensor gelu(const Tensor& a) {
    // exact erf form
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary_op(
        a,
        [](Scalar x) {
            const double xd = x;
            return static_cast<Scalar>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
        },
        [](Scalar x, Scalar) {
            const double xd = x;
            const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
            return static_cast<Scalar>(cdf + xd * pdf);
        });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto s = split_axis(a.shape(), axis);
    Tensor out(reduced_shape(a.shape(), axis, keepdim));
    const Scalar* pa = a.ptr();
    Scalar* po = out.ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) po[o * s.inner + i] += pa[(o * s.extent + e) * s.inner + i];
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, s]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            Scalar* ga = a.grad().data();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t e = 0; e < s.extent; ++e)
                    for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
        });
    }
    return out;
}

Tensor mean(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto n = a.dim(axis);
    return scale(sum(a, axis, keepdim), Scalar(1) / static_cast<Scalar>(n));
}

Tensor variance(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto s = split_axis(a.shape(), axis);
    Tensor out(reduced_shape(a.shape(), axis, keepdim));
    std::vector<Scalar> means(s.outer * s.inner, 0);
    const Scalar* pa = a.ptr();
    Scalar* po = out.ptr();
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            Scalar acc = 0;
            for (std::size_t e = 0; e < s.extent; ++e) acc += pa[(o * s.extent + e) * s.inner + i];
            const Scalar mu = acc * inv_n;
            Scalar var = 0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const Scalar d = pa[(o * s.extent + e) * s.inner + i] - mu;
                var += d * d;
            }
            means[o * s.inner + i] = mu;
            po[o * s.inner + i] = var * inv_n;
        }
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, s, means = std::move(means), inv_n]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            const Scalar* pa = a.ptr();
            Scalar* ga = a.grad().data();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const Scalar mu = means[o * s.inner + i];
                    const Scalar gi = g[o * s.inner + i] * 2 * inv_n;
                    for (std::size_t e = 0; e < s.extent; ++e) {
                        const std::size_t idx = (o * s.extent + e) * s.inner + i;
                        ga[idx] += gi * (pa[idx] - mu);
                    }
                }
        });
    }
    return out;
}

Tensor max(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto s = split_axis(a.shape(), axis);
    Tensor out(reduced_shape(a.shape(), axis, keepdim));
    std::vector<std::size_t> arg(s.outer * s.inner, 0);
    const Scalar* pa = a.ptr();
    Scalar* po = out.ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = 0;
            Scalar best_v = pa[o * s.extent * s.inner + i];
            for (std::size_t e = 1; e < s.extent; ++e) {
                const Scalar v = pa[(o * s.extent + e) * s.inner + i];
                if (v > best_v) {
                    best_v = v;
                    best = e;
                }
            }
            po[o * s.inner + i] = best_v;
            arg[o * s.inner + i] = best;
        }
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, s, arg = std::move(arg)]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            Scalar* ga = a.grad().data();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i)
                    ga[(o * s.extent + arg[o * s.inner + i]) * s.inner + i] += g[o * s.inner + i];
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) { return sum(reshape(a, Shape{a.numel()}), 0); }

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), Scalar(1) / static_cast<Scalar>(a.numel())); }

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
    }
    Tensor out(std::move(shape), std::vector<Scalar>(a.data().begin(), a.data().end()));
    record_identity_grad(a, out);
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(a.shape()));
    Shape shape = a.shape();
    const std::size_t rows = shape[shape.size() - 2], cols = shape.back();
    std::swap(shape[shape.size() - 2], shape.back());
    Tensor out(shape);
    const std::size_t batch = a.numel() / (rows * cols);
    for (std::size_t b = 0; b < batch; ++b) transpose_into(a.ptr() + b * rows * cols, out.ptr() + b * rows * cols, rows, cols);
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, rows, cols, batch]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            Scalar* ga = a.grad().data();
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t off = b * rows * cols;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) ga[off + r * cols + c] += g[off + c * rows + r];
            }
        });
    }
    return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
    const std::size_t rank = a.rank();
    if (order.size() != rank) {
        throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for " + shape_str(a.shape()));
    }
    std::vector<bool> seen(rank, false);
    for (auto ax : order) {
        if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis order for " + shape_str(a.shape()));
        seen[ax] = true;
    }
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.shape()[i];
    Shape out_shape(rank);
    std::vector<std::size_t> src_stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = a.shape()[order[i]];
        src_stride[i] = in_stride[order[i]];
    }
    // Source offset of every output element, walked odometer-style.
    std::vector<std::size_t> src(a.numel());
    {
        std::vector<std::size_t> idx(rank, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < src.size(); ++i) {
            src[i] = off;
            for (std::size_t d = rank; d-- > 0;) {
                ++idx[d];
                off += src_stride[d];
                if (idx[d] < out_shape[d]) break;
                off -= src_stride[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    Tensor out(out_shape);
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = a[src[i]];
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, src = std::move(src)]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            Scalar* ga = a.grad().data();
            for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(probe));
        for (std::size_t i = 0; i < probe.size(); ++i) {
            if (i != axis && probe[i] != first[i]) {
                throw ShapeError("concat: " + shape_str(first) + " vs " + shape_str(probe));
            }
        }
        out_shape[axis] += probe[axis];
    }
    const auto s = split_axis(out_shape, axis);
    Tensor out(out_shape);
    std::size_t offset = 0;  // along axis
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t ext = p.shape()[axis];
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(p.ptr() + o * ext * s.inner, ext * s.inner, out.ptr() + (o * s.extent + offset) * s.inner);
        }
        offset += ext;
    }
    GradTape* tape = active_tape();
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (tape && any) {
        out.set_requires_grad();
        tape->record([parts, out, s, axis, offsets = std::move(offsets)]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            for (std::size_t n = 0; n < parts.size(); ++n) {
                auto& p = parts[n];
                if (!p.requires_grad()) continue;
                const std::size_t ext = p.shape()[axis];
                Scalar* gp = p.grad().data();
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t j = 0; j < ext * s.inner; ++j)
                        gp[o * ext * s.inner + j] += g[(o * s.extent + offsets[n]) * s.inner + j];
            }
        });
    }
    return out;
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    if (auto* tape = tracking({&a, &b})) {
        out.set_requires_grad();
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            std::vector<Scalar> scratch;
            if (a.requires_grad()) gemm_nt(g, b.ptr(), a.grad().data(), m, n, k, scratch);
            if (b.requires_grad()) gemm_tn(a.ptr(), g, b.grad().data(), m, k, n);
        });
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()) ||
        a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2]) {
        throw ShapeError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back(), n = b.shape().back();
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    for (std::size_t i = 0; i < batch; ++i) gemm_nn(a.ptr() + i * m * k, b.ptr() + i * k * n, out.ptr() + i * m * n, m, k, n);
    if (auto* tape = tracking({&a, &b})) {
        out.set_requires_grad();
        tape->record([a, b, out, m, k, n, batch]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            std::vector<Scalar> scratch;
            Scalar* ga = a.requires_grad() ? a.grad().data() : nullptr;
            Scalar* gb = b.requires_grad() ? b.grad().data() : nullptr;
            for (std::size_t i = 0; i < batch; ++i) {
                if (ga) gemm_nt(g + i * m * n, b.ptr() + i * k * n, ga + i * m * k, m, n, k, scratch);
                if (gb) gemm_tn(a.ptr() + i * m * k, g + i * m * n, gb + i * k * n, m, k, n);
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.shape()[0]) {
        throw ShapeError("linear: cannot map " + shape_str(x.shape()) + " through " + shape_str(w.shape()));
    }
    const std::size_t k = w.shape()[0], n = w.shape()[1], m = x.numel() / k;
    if (bias && (bias->rank() != 1 || bias->shape()[0] != n)) {
        throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match output width " + std::to_string(n));
    }
    Shape out_shape = x.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    Scalar* po = out.ptr();
    if (bias) {
        for (std::size_t i = 0; i < m; ++i) std::copy_n(bias->ptr(), n, po + i * n);
    }
    gemm_nn(x.ptr(), w.ptr(), po, m, k, n);
    const Tensor b = bias ? *bias : Tensor();
    const bool has_bias = bias != nullptr;
    if (auto* tape = tracking({&x, &w, bias})) {
        out.set_requires_grad();
        tape->record([x, w, b, has_bias, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            std::vector<Scalar> scratch;
            if (x.requires_grad()) gemm_nt(g, w.ptr(), x.grad().data(), m, n, k, scratch);
            if (w.requires_grad()) gemm_tn(x.ptr(), g, w.grad().data(), m, k, n);
            if (has_bias && b.requires_grad()) {
                Scalar* gb = b.grad().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return out;
}

// ---- normalization / attention primitives ---------------------------------

Tensor softmax(const Tensor& a, std::size_t axis) {
    const auto s = split_axis(a.shape(), axis);
    Tensor out(a.shape());
    const Scalar* pa = a.ptr();
    Scalar* po = out.ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            Scalar mx = pa[base];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, pa[base + e * s.inner]);
            Scalar total = 0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const Scalar v = std::exp(pa[base + e * s.inner] - mx);
                po[base + e * s.inner] = v;
                total += v;
            }
            const Scalar inv = Scalar(1) / total;
            for (std::size_t e = 0; e < s.extent; ++e) po[base + e * s.inner] *= inv;
        }
    if (auto* tape = tracking({&a})) {
        out.set_requires_grad();
        tape->record([a, out, s]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            const Scalar* y = out.ptr();
            Scalar* ga = a.grad().data();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.extent * s.inner + i;
                    Scalar dot = 0;
                    for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
                    for (std::size_t e = 0; e < s.extent; ++e) {
                        const std::size_t idx = base + e * s.inner;
                        ga[idx] += y[idx] * (g[idx] - dot);
                    }
                }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match width " + std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    Tensor out(x.shape());
    std::vector<Scalar> xhat(x.numel());
    std::vector<Scalar> rstd(rows);
    const Scalar* px = x.ptr();
    const Scalar* pg = gain.ptr();
    const Scalar* pb = bias.ptr();
    Scalar* po = out.ptr();
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = px + r * d;
        Scalar mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu *= inv_d;
        Scalar var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var *= inv_d;
        const Scalar rs = Scalar(1) / std::sqrt(var + kLayerNormEps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const Scalar h = (row[j] - mu) * rs;
            xhat[r * d + j] = h;
            po[r * d + j] = h * pg[j] + pb[j];
        }
    }
    if (auto* tape = tracking({&x, &gain, &bias})) {
        out.set_requires_grad();
        tape->record([x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d, inv_d]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            const Scalar* pg = gain.ptr();
            Scalar* gx = x.requires_grad() ? x.grad().data() : nullptr;
            Scalar* gg = gain.requires_grad() ? gain.grad().data() : nullptr;
            Scalar* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar* gr = g + r * d;
                const Scalar* hr = xhat.data() + r * d;
                if (gg)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                if (gb)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                if (gx) {
                    Scalar mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const Scalar dh = gr[j] * pg[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const Scalar dh = gr[j] * pg[j];
                        gx[r * d + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

Tensor lse(Scalar beta, const Tensor& z) {
    if (!(beta > 0)) throw ParameterError("lse: beta must be positive, got " + std::to_string(beta));
    const Scalar* pz = z.ptr();
    const std::size_t n = z.numel();
    Scalar mx = pz[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, pz[i]);
    std::vector<Scalar> weights(n);
    Scalar total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        weights[i] = std::exp(beta * (pz[i] - mx));
        total += weights[i];
    }
    for (auto& w : weights) w /= total;
    Tensor out = Tensor::scalar(mx + std::log(total) / beta);
    if (auto* tape = tracking({&z})) {
        out.set_requires_grad();
        tape->record([z, out, weights = std::move(weights)]() mutable {
            if (!out.has_grad()) return;
            const Scalar g = out.grad()[0];
            Scalar* gz = z.grad().data();
            for (std::size_t i = 0; i < weights.size(); ++i) gz[i] += g * weights[i];
        });
    }
    return out;
}

std::vector<unsigned char> top_k_selection(const Tensor& scores, std::size_t k) {
    if (scores.rank() < 1) throw ShapeError("top_k_mask needs rank >= 1");
    const std::size_t n = scores.shape().back();
    if (k < 1 || k > n) {
        throw ParameterError("top_k_mask: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
    }
    const std::size_t rows = scores.numel() / n;
    std::vector<unsigned char> keep(scores.numel(), 0);
    std::vector<std::size_t> order(n);
    const Scalar* ps = scores.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = ps + r * n;
        if (k == n) {
            std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(r * n), n, 1);
            continue;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(),
                         [row](std::size_t i, std::size_t j) { return row[i] > row[j] || (row[i] == row[j] && i < j); });
        // nth_element leaves the k best (under the strict order) in front.
        for (std::size_t i = 0; i < k; ++i) keep[r * n + order[i]] = 1;
    }
    return keep;
}

Tensor top_k_mask(const Tensor& scores, std::size_t k) {
    auto keep = top_k_selection(scores, k);
    Tensor out(scores.shape());
    const Scalar* ps = scores.ptr();
    Scalar* po = out.ptr();
    for (std::size_t i = 0; i < keep.size(); ++i) po[i] = keep[i] ? ps[i] : Scalar(0);
    if (auto* tape = tracking({&scores})) {
        out.set_requires_grad();
        tape->record([scores, out, keep = std::move(keep)]() mutable {
            if (!out.has_grad()) return;
            const Scalar* g = out.grad().data();
            Scalar* gs = scores.grad().data();
            for (std::size_t i = 0; i < keep.size(); ++i)
                if (keep[i]) gs[i] += g[i];
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
    }
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    std::vector<Scalar> probs(logits.numel());
    double total = 0;
    const Scalar* pl = logits.ptr();
    for (std::size_t b = 0; b < batch; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw ParameterError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                 std::to_string(classes) + ")");
        }
        const Scalar* row = pl + b * classes;
        const Scalar mx = *std::max_element(row, row + classes);
        Scalar z = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - mx);
            z += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
        total += static_cast<double>(mx + std::log(z) - row[label]);
    }
    Tensor out = Tensor::scalar(static_cast<Scalar>(total / static_cast<double>(batch)));
    if (auto* tape = tracking({&logits})) {
        out.set_requires_grad();
        std::vector<int> lab(labels.begin(), labels.end());
        tape->record([logits, out, probs = std::move(probs), lab = std::move(lab), batch, classes]() mutable {
            if (!out.has_grad()) return;
            const Scalar g = out.grad()[0] / static_cast<Scalar>(batch);
            Scalar* gl = logits.grad().data();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < classes; ++c) {
                    const Scalar onehot = static_cast<int>(c) == lab[b] ? Scalar(1) : Scalar(0);
                    gl[b * classes + c] += g * (probs[b * classes + c] - onehot);
                }
        });
    }
    return out;
}

}  // namespace ait
