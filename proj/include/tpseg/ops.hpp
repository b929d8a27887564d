#pragma once

// Differentiable free functions over Tensor<S>. Each op computes its
// forward value eagerly and, when a tape is active and an input requires
// grad, records a backward closure that scatters into the inputs' grad
// buffers. All ops are pure and deterministic; Eigen provides the matrix
// kernels, everything else is explicit loops.

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "tpseg/tensor.hpp"

namespace tpseg {

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;

inline constexpr double kL2NormalizeEps = 1e-12;

namespace detail {

template <typename S>
bool should_track(std::initializer_list<const Tensor<S>*> inputs) {
    if (active_tape<S>() == nullptr) return false;
    for (const Tensor<S>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename S>
Tensor<S> finish(Tensor<S> out, bool track) {
    if (track) out.set_requires_grad(true);
    return out;
}

// ---------------------------------------------------------------------
// Broadcasting (numpy semantics, right-aligned; extent 1 stretches)
// ---------------------------------------------------------------------

struct BroadcastPlan {
    Shape out_shape;
    std::vector<Index> a_strides; // per out dim; 0 on stretched dims
    std::vector<Index> b_strides;
    Index out_numel = 0;
};

inline BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b, const char* op_name) {
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int r = std::max(ra, rb);
    BroadcastPlan plan;
    plan.out_shape.resize(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) {
        Index da = d < r - ra ? 1 : a[static_cast<std::size_t>(d - (r - ra))];
        Index db = d < r - rb ? 1 : b[static_cast<std::size_t>(d - (r - rb))];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op_name) + ": shapes not broadcastable: " +
                             shape_str(a) + " vs " + shape_str(b));
        plan.out_shape[static_cast<std::size_t>(d)] = std::max(da, db);
    }
    auto sa = strides_of(a), sb = strides_of(b);
    plan.a_strides.assign(static_cast<std::size_t>(r), 0);
    plan.b_strides.assign(static_cast<std::size_t>(r), 0);
    for (int d = 0; d < r; ++d) {
        Index da = d < r - ra ? 1 : a[static_cast<std::size_t>(d - (r - ra))];
        Index db = d < r - rb ? 1 : b[static_cast<std::size_t>(d - (r - rb))];
        if (d >= r - ra && da != 1) plan.a_strides[d] = sa[static_cast<std::size_t>(d - (r - ra))];
        if (d >= r - rb && db != 1) plan.b_strides[d] = sb[static_cast<std::size_t>(d - (r - rb))];
    }
    plan.out_numel = numel_of(plan.out_shape);
    return plan;
}

// Calls fn(out_flat, a_offset, b_offset) over the full output extent.
template <typename Fn>
void broadcast_walk(const BroadcastPlan& plan, Fn&& fn) {
    int r = static_cast<int>(plan.out_shape.size());
    std::vector<Index> idx(static_cast<std::size_t>(r), 0);
    Index oa = 0, ob = 0;
    for (Index o = 0; o < plan.out_numel; ++o) {
        fn(o, oa, ob);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[static_cast<std::size_t>(d)];
            oa += plan.a_strides[static_cast<std::size_t>(d)];
            ob += plan.b_strides[static_cast<std::size_t>(d)];
            if (idx[static_cast<std::size_t>(d)] < plan.out_shape[static_cast<std::size_t>(d)]) break;
            idx[static_cast<std::size_t>(d)] = 0;
            oa -= plan.a_strides[static_cast<std::size_t>(d)] * plan.out_shape[static_cast<std::size_t>(d)];
            ob -= plan.b_strides[static_cast<std::size_t>(d)] * plan.out_shape[static_cast<std::size_t>(d)];
        }
    }
}

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> broadcast_binary(const Tensor<S>& a, const Tensor<S>& b, const char* name,
                           FwdFn&& fwd, BwdFn&& bwd) {
    BroadcastPlan plan = make_broadcast_plan(a.shape(), b.shape(), name);
    std::vector<S> vals(static_cast<std::size_t>(plan.out_numel));
    const S* pa = a.data();
    const S* pb = b.data();
    broadcast_walk(plan, [&](Index o, Index oa, Index ob) {
        vals[static_cast<std::size_t>(o)] = fwd(pa[oa], pb[ob]);
    });
    bool track = should_track<S>({&a, &b});
    Tensor<S> out = finish(Tensor<S>(plan.out_shape, std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({a.id(), b.id()}, out.id(), [a, b, out, plan, bwd]() {
            const std::vector<S>& g = *out.grad();
            std::vector<S>* ga = a.requires_grad() ? a.grad() : nullptr;
            std::vector<S>* gb = b.requires_grad() ? b.grad() : nullptr;
            const S* pa = a.data();
            const S* pb = b.data();
            broadcast_walk(plan, [&](Index o, Index oa, Index ob) {
                bwd(g[static_cast<std::size_t>(o)], pa[oa], pb[ob],
                    ga ? &(*ga)[static_cast<std::size_t>(oa)] : nullptr,
                    gb ? &(*gb)[static_cast<std::size_t>(ob)] : nullptr);
            });
        });
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------
// Elementwise binary ops (broadcasting)
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::broadcast_binary<S>(
        a, b, "add", [](S x, S y) { return x + y; },
        [](S g, S, S, S* ga, S* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::broadcast_binary<S>(
        a, b, "sub", [](S x, S y) { return x - y; },
        [](S g, S, S, S* ga, S* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::broadcast_binary<S>(
        a, b, "mul", [](S x, S y) { return x * y; },
        [](S g, S x, S y, S* ga, S* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::broadcast_binary<S>(
        a, b, "div", [](S x, S y) { return x / y; },
        [](S g, S x, S y, S* ga, S* gb) {
            if (ga) *ga += g / y;
            if (gb) *gb -= g * x / (y * y);
        });
}

// ---------------------------------------------------------------------
// Scalar-constant ops
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, double c) {
    std::vector<S> vals(x.values());
    for (auto& v : vals) v = static_cast<S>(v * static_cast<S>(c));
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, c]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * static_cast<S>(c);
        });
    }
    return out;
}

template <typename S>
Tensor<S> scalar_add(const Tensor<S>& x, double c) {
    std::vector<S> vals(x.values());
    for (auto& v : vals) v = static_cast<S>(v + static_cast<S>(c));
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
    return scalar_mul(x, -1.0);
}

// ---------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------

namespace detail {

template <typename S, typename FwdFn, typename DerivFn>
Tensor<S> unary_op(const Tensor<S>& x, FwdFn&& fwd, DerivFn&& deriv) {
    std::vector<S> vals(x.values());
    for (auto& v : vals) v = fwd(v);
    bool track = should_track<S>({&x});
    Tensor<S> out = finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, deriv]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            const std::vector<S>& xv = x.values();
            const std::vector<S>& yv = out.values();
            std::vector<S>& gx = *x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
        });
    }
    return out;
}

} // namespace detail

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return detail::unary_op(
        x,
        [](S v) {
            if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
            S e = std::exp(v);
            return e / (S(1) + e);
        },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    // exact erf form; derivative Phi(v) + v*phi(v)
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        x,
        [=](S v) {
            return static_cast<S>(0.5 * static_cast<double>(v) *
                                  (1.0 + std::erf(static_cast<double>(v) * inv_sqrt2)));
        },
        [=](S v, S) {
            double vd = static_cast<double>(v);
            double cdf = 0.5 * (1.0 + std::erf(vd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * vd * vd);
            return static_cast<S>(cdf + vd * pdf);
        });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

// Gradient passes where lo <= x <= hi and is zero where the clamp binds.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, double lo, double hi) {
    return detail::unary_op(
        x,
        [=](S v) { return std::min(std::max(v, static_cast<S>(lo)), static_cast<S>(hi)); },
        [=](S v, S) {
            return (v >= static_cast<S>(lo) && v <= static_cast<S>(hi)) ? S(1) : S(0);
        });
}

// ---------------------------------------------------------------------
// Matrix product (leading batch dims broadcast)
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: both operands need rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    Index m = a.dim(-2), k = a.dim(-1);
    Index k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    detail::BroadcastPlan plan = detail::make_broadcast_plan(a_batch, b_batch, "matmul");

    Shape out_shape = plan.out_shape;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<S> vals(static_cast<std::size_t>(plan.out_numel * m * n));

    const Index a_block = m * k, b_block = k * n, o_block = m * n;
    auto run_batches = [](const detail::BroadcastPlan& p, auto&& per_batch) {
        if (p.out_shape.empty()) {
            per_batch(Index(0), Index(0), Index(0));
        } else {
            detail::broadcast_walk(p, per_batch);
        }
    };

    run_batches(plan, [&](Index o, Index oa, Index ob) {
        ConstMatMap<S> A(a.data() + oa * a_block, m, k);
        ConstMatMap<S> B(b.data() + ob * b_block, k, n);
        MatMap<S> O(vals.data() + o * o_block, m, n);
        O.noalias() = A * B;
    });

    bool track = detail::should_track<S>({&a, &b});
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({a.id(), b.id()}, out.id(),
                                 [a, b, out, plan, m, k, n, a_block, b_block, o_block, run_batches]() {
            run_batches(plan, [&](Index o, Index oa, Index ob) {
                ConstMatMap<S> A(a.data() + oa * a_block, m, k);
                ConstMatMap<S> B(b.data() + ob * b_block, k, n);
                ConstMatMap<S> G(out.grad()->data() + o * o_block, m, n);
                if (a.requires_grad()) {
                    MatMap<S> GA(a.grad()->data() + oa * a_block, m, k);
                    GA.noalias() += G * B.transpose();
                }
                if (b.requires_grad()) {
                    MatMap<S> GB(b.grad()->data() + ob * b_block, k, n);
                    GB.noalias() += A.transpose() * G;
                }
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>::shared_view(std::move(new_shape), x.storage()), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, std::vector<int> perm) {
    int r = x.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ShapeError("permute: perm arity does not match rank of " + shape_str(x.shape()));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ShapeError("permute: invalid permutation for " + shape_str(x.shape()));
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d)
        out_shape[static_cast<std::size_t>(d)] = x.dim(perm[static_cast<std::size_t>(d)]);

    // walk the output in order; the source offset follows via permuted strides
    auto walk = [](const Shape& oshape, const std::vector<Index>& in_strides,
                   const std::vector<int>& p, Index n, auto&& fn) {
        int rr = static_cast<int>(oshape.size());
        std::vector<Index> idx(static_cast<std::size_t>(rr), 0);
        Index in_off = 0;
        for (Index o = 0; o < n; ++o) {
            fn(o, in_off);
            for (int d = rr - 1; d >= 0; --d) {
                Index stride = in_strides[static_cast<std::size_t>(p[static_cast<std::size_t>(d)])];
                ++idx[static_cast<std::size_t>(d)];
                in_off += stride;
                if (idx[static_cast<std::size_t>(d)] < oshape[static_cast<std::size_t>(d)]) break;
                idx[static_cast<std::size_t>(d)] = 0;
                in_off -= stride * oshape[static_cast<std::size_t>(d)];
            }
        }
    };

    std::vector<Index> in_strides = strides_of(x.shape());
    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    {
        const S* src = x.data();
        walk(out_shape, in_strides, perm, x.numel(),
             [&](Index o, Index in_off) { vals[static_cast<std::size_t>(o)] = src[in_off]; });
    }
    bool track = detail::should_track<S>({&x});
    Shape out_shape_copy = out_shape;
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record(
            {x.id()}, out.id(), [x, out, out_shape_copy, in_strides, perm, walk]() {
                if (!x.requires_grad()) return;
                const std::vector<S>& g = *out.grad();
                std::vector<S>& gx = *x.grad();
                walk(out_shape_copy, in_strides, perm, x.numel(), [&](Index o, Index in_off) {
                    gx[static_cast<std::size_t>(in_off)] += g[static_cast<std::size_t>(o)];
                });
            });
    }
    return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: want rank 2, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int dim) {
    if (parts.empty()) throw ValidationError("concat: empty part list");
    int r = parts[0].rank();
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r) throw ShapeError("concat: dim out of range");
    Shape out_shape = parts[0].shape();
    Index total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != dim && p.dim(d) != out_shape[static_cast<std::size_t>(d)])
                throw ShapeError("concat: shape mismatch: " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        total += p.dim(dim);
    }
    out_shape[static_cast<std::size_t>(dim)] = total;

    Index outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = dim + 1; d < r; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

    std::vector<S> vals(static_cast<std::size_t>(numel_of(out_shape)));
    Index out_row = total * inner;
    Index at = 0;
    for (const auto& p : parts) {
        Index plen = p.dim(dim) * inner;
        const S* src = p.data();
        for (Index o = 0; o < outer; ++o)
            std::copy(src + o * plen, src + (o + 1) * plen, vals.begin() + o * out_row + at);
        at += plen;
    }

    bool track = false;
    {
        std::vector<const Tensor<S>*> ptrs;
        for (const auto& p : parts) ptrs.push_back(&p);
        if (active_tape<S>() != nullptr)
            for (auto* p : ptrs)
                if (p->requires_grad()) track = true;
    }
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        std::vector<std::uint64_t> ids;
        for (const auto& p : parts) ids.push_back(p.id());
        auto parts_copy = parts;
        active_tape<S>()->record(ids, out.id(), [parts_copy, out, outer, inner, out_row]() {
            const std::vector<S>& g = *out.grad();
            Index at = 0;
            for (const auto& p : parts_copy) {
                Index span = static_cast<Index>(p.numel()) / outer;
                if (p.requires_grad()) {
                    std::vector<S>& gp = *p.grad();
                    for (Index o = 0; o < outer; ++o)
                        for (Index i = 0; i < span; ++i)
                            gp[static_cast<std::size_t>(o * span + i)] +=
                                g[static_cast<std::size_t>(o * out_row + at + i)];
                }
                at += span;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int dim, Index start, Index len) {
    int r = x.rank();
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r) throw ShapeError("slice: dim out of range");
    Index extent = x.dim(dim);
    if (start < 0 || len <= 0 || start + len > extent)
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for extent " +
                         std::to_string(extent));
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(dim)] = len;

    Index outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= x.dim(d);
    for (int d = dim + 1; d < r; ++d) inner *= x.dim(d);

    std::vector<S> vals(static_cast<std::size_t>(outer * len * inner));
    const S* src = x.data();
    for (Index o = 0; o < outer; ++o)
        std::copy(src + (o * extent + start) * inner, src + (o * extent + start + len) * inner,
                  vals.begin() + o * len * inner);

    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(),
                                 [x, out, outer, inner, len, start, extent]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (Index o = 0; o < outer; ++o)
                for (Index i = 0; i < len * inner; ++i)
                    gx[static_cast<std::size_t>((o * extent + start) * inner + i)] +=
                        g[static_cast<std::size_t>(o * len * inner + i)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------
// Reductions (whole-tensor, scalar result)
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.values()) acc += v;
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>::scalar(acc), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out]() {
            if (!x.requires_grad()) return;
            S g = (*out.grad())[0];
            for (auto& gv : *x.grad()) gv += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.values()) acc += v;
    S n = static_cast<S>(x.numel());
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>::scalar(acc / n), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, n]() {
            if (!x.requires_grad()) return;
            S g = (*out.grad())[0] / n;
            for (auto& gv : *x.grad()) gv += g;
        });
    }
    return out;
}

namespace detail {

template <typename S, typename Cmp>
Tensor<S> reduce_extremum(const Tensor<S>& x, Cmp cmp) {
    const std::vector<S>& v = x.values();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (cmp(v[i], v[arg])) arg = i;
    bool track = should_track<S>({&x});
    Tensor<S> out = finish(Tensor<S>::scalar(v[arg]), track);
    if (track) {
        // subgradient routed to the first extremal element
        active_tape<S>()->record({x.id()}, out.id(), [x, out, arg]() {
            if (!x.requires_grad()) return;
            (*x.grad())[arg] += (*out.grad())[0];
        });
    }
    return out;
}

} // namespace detail

template <typename S>
Tensor<S> reduce_min(const Tensor<S>& x) {
    return detail::reduce_extremum(x, [](S a, S b) { return a < b; });
}

template <typename S>
Tensor<S> reduce_max(const Tensor<S>& x) {
    return detail::reduce_extremum(x, [](S a, S b) { return a > b; });
}

// ---------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    if (x.rank() < 1 || x.dim(-1) < 1)
        throw ShapeError("softmax_lastdim: need non-empty last dim, got " + shape_str(x.shape()));
    for (S v : x.values())
        if (std::isnan(v)) throw NumericError("softmax_lastdim: NaN in input");
    Index cols = x.dim(-1);
    Index rows = x.numel() / cols;
    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    const S* src = x.data();
    for (Index r = 0; r < rows; ++r) {
        const S* in = src + r * cols;
        S* outp = vals.data() + r * cols;
        S mx = in[0];
        for (Index c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        S sum = S(0);
        for (Index c = 0; c < cols; ++c) {
            outp[c] = std::exp(in[c] - mx);
            sum += outp[c];
        }
        for (Index c = 0; c < cols; ++c) outp[c] /= sum;
    }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, rows, cols]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            const std::vector<S>& y = out.values();
            std::vector<S>& gx = *x.grad();
            for (Index r = 0; r < rows; ++r) {
                S dot = S(0);
                for (Index c = 0; c < cols; ++c)
                    dot += g[static_cast<std::size_t>(r * cols + c)] *
                           y[static_cast<std::size_t>(r * cols + c)];
                for (Index c = 0; c < cols; ++c) {
                    std::size_t i = static_cast<std::size_t>(r * cols + c);
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
        });
    }
    return out;
}

// Unit L2 norm along `dim`; slices with norm below kL2NormalizeEps come
// back zeroed (and pass zero gradient).
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, int dim) {
    int r = x.rank();
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r) throw ShapeError("l2_normalize: dim out of range");
    Index len = x.dim(dim);
    Index inner = 1, outer = 1;
    for (int d = dim + 1; d < r; ++d) inner *= x.dim(d);
    for (int d = 0; d < dim; ++d) outer *= x.dim(d);

    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    const S* src = x.data();
    auto line_base = [=](Index o, Index i) { return o * len * inner + i; };
    for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
            double norm2 = 0;
            for (Index k = 0; k < len; ++k) {
                double v = static_cast<double>(src[line_base(o, i) + k * inner]);
                norm2 += v * v;
            }
            double norm = std::sqrt(norm2);
            if (norm < kL2NormalizeEps) {
                for (Index k = 0; k < len; ++k)
                    vals[static_cast<std::size_t>(line_base(o, i) + k * inner)] = S(0);
            } else {
                for (Index k = 0; k < len; ++k) {
                    std::size_t at = static_cast<std::size_t>(line_base(o, i) + k * inner);
                    vals[at] = static_cast<S>(static_cast<double>(src[at]) / norm);
                }
            }
        }
    }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, outer, inner, len, line_base]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            const S* src = x.data();
            std::vector<S>& gx = *x.grad();
            for (Index o = 0; o < outer; ++o) {
                for (Index i = 0; i < inner; ++i) {
                    double norm2 = 0, dot = 0;
                    for (Index k = 0; k < len; ++k) {
                        std::size_t at = static_cast<std::size_t>(line_base(o, i) + k * inner);
                        double v = static_cast<double>(src[at]);
                        norm2 += v * v;
                        dot += v * static_cast<double>(g[at]);
                    }
                    double norm = std::sqrt(norm2);
                    if (norm < kL2NormalizeEps) continue;
                    double inv = 1.0 / norm;
                    double inv3 = inv * inv * inv;
                    for (Index k = 0; k < len; ++k) {
                        std::size_t at = static_cast<std::size_t>(line_base(o, i) + k * inner);
                        gx[at] += static_cast<S>(static_cast<double>(g[at]) * inv -
                                                 static_cast<double>(src[at]) * dot * inv3);
                    }
                }
            }
        });
    }
    return out;
}

// Layer norm over the last dim with learned gain/bias of shape [C].
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-5) {
    Index cols = x.dim(-1);
    if (gain.numel() != cols || bias.numel() != cols)
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(cols) +
                         " elements to match " + shape_str(x.shape()));
    Index rows = x.numel() / cols;
    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    const S* src = x.data();
    const S* gv = gain.data();
    const S* bv = bias.data();
    for (Index r = 0; r < rows; ++r) {
        const S* in = src + r * cols;
        S* outp = vals.data() + r * cols;
        double mean = 0;
        for (Index c = 0; c < cols; ++c) mean += static_cast<double>(in[c]);
        mean /= static_cast<double>(cols);
        double var = 0;
        for (Index c = 0; c < cols; ++c) {
            double d = static_cast<double>(in[c]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double inv = 1.0 / std::sqrt(var + eps);
        for (Index c = 0; c < cols; ++c) {
            double xhat = (static_cast<double>(in[c]) - mean) * inv;
            outp[c] = static_cast<S>(xhat * static_cast<double>(gv[c]) +
                                     static_cast<double>(bv[c]));
        }
    }
    bool track = detail::should_track<S>({&x, &gain, &bias});
    Tensor<S> out = detail::finish(Tensor<S>(x.shape(), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id(), gain.id(), bias.id()}, out.id(),
                                 [x, gain, bias, out, rows, cols, eps]() {
            const std::vector<S>& g = *out.grad();
            const S* src = x.data();
            const S* gv = gain.data();
            std::vector<S>* gx = x.requires_grad() ? x.grad() : nullptr;
            std::vector<S>* gg = gain.requires_grad() ? gain.grad() : nullptr;
            std::vector<S>* gb = bias.requires_grad() ? bias.grad() : nullptr;
            std::vector<double> xhat(static_cast<std::size_t>(cols));
            for (Index r = 0; r < rows; ++r) {
                const S* in = src + r * cols;
                const S* go = g.data() + r * cols;
                double mean = 0;
                for (Index c = 0; c < cols; ++c) mean += static_cast<double>(in[c]);
                mean /= static_cast<double>(cols);
                double var = 0;
                for (Index c = 0; c < cols; ++c) {
                    double d = static_cast<double>(in[c]) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                double inv = 1.0 / std::sqrt(var + eps);
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (Index c = 0; c < cols; ++c) {
                    xhat[static_cast<std::size_t>(c)] = (static_cast<double>(in[c]) - mean) * inv;
                    double dxhat = static_cast<double>(go[c]) * static_cast<double>(gv[c]);
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat[static_cast<std::size_t>(c)];
                }
                for (Index c = 0; c < cols; ++c) {
                    std::size_t at = static_cast<std::size_t>(r * cols + c);
                    double dxhat = static_cast<double>(go[c]) * static_cast<double>(gv[c]);
                    if (gx)
                        (*gx)[at] += static_cast<S>(
                            inv / static_cast<double>(cols) *
                            (static_cast<double>(cols) * dxhat - sum_dxhat -
                             xhat[static_cast<std::size_t>(c)] * sum_dxhat_xhat));
                    if (gg)
                        (*gg)[static_cast<std::size_t>(c)] +=
                            static_cast<S>(static_cast<double>(go[c]) *
                                           xhat[static_cast<std::size_t>(c)]);
                    if (gb) (*gb)[static_cast<std::size_t>(c)] += go[c];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------
// Dense affine over the last dim
// ---------------------------------------------------------------------

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
    if (weight.rank() != 2)
        throw ShapeError("linear: weight must be rank 2, got " + shape_str(weight.shape()));
    Index in = x.dim(-1);
    if (weight.dim(0) != in)
        throw ShapeError("linear: input features " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(weight.shape()));
    Index out_features = weight.dim(1);
    if (bias.numel() != out_features)
        throw ShapeError("linear: bias size does not match weight " + shape_str(weight.shape()));
    Index n = x.numel() / in;
    Tensor<S> flat = reshape(x, {n, in});
    Tensor<S> y = add(matmul(flat, weight), reshape(bias, {out_features}));
    Shape out_shape = x.shape();
    out_shape.back() = out_features;
    return reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------
// Spatial ops (channels-last [H, W, C])
// ---------------------------------------------------------------------

// 1x1 convolution with stride: per-position affine channel map sampled
// every `stride` pixels starting at (0,0). Output is [ceil(h/s), ceil(w/s), c_out].
template <typename S>
Tensor<S> conv1x1(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                  Index stride = 1) {
    if (x.rank() != 3)
        throw ShapeError("conv1x1: input must be [H, W, C], got " + shape_str(x.shape()));
    if (weight.rank() != 2)
        throw ShapeError("conv1x1: weight must be [C_in, C_out], got " + shape_str(weight.shape()));
    if (stride < 1) throw ValidationError("conv1x1: stride must be >= 1");
    Index h = x.dim(0), w = x.dim(1), cin = x.dim(2);
    if (weight.dim(0) != cin)
        throw ShapeError("conv1x1: channel mismatch: input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(weight.shape()));
    Index cout = weight.dim(1);
    if (bias.numel() != cout)
        throw ShapeError("conv1x1: bias size does not match weight " + shape_str(weight.shape()));
    Index ho = (h + stride - 1) / stride;
    Index wo = (w + stride - 1) / stride;
    Index rows = ho * wo;

    // gather sampled pixels into a [rows, cin] matrix, then one GEMM
    std::vector<S> gathered(static_cast<std::size_t>(rows * cin));
    const S* src = x.data();
    for (Index i = 0; i < ho; ++i)
        for (Index j = 0; j < wo; ++j) {
            const S* px = src + ((i * stride) * w + (j * stride)) * cin;
            std::copy(px, px + cin, gathered.begin() + (i * wo + j) * cin);
        }

    std::vector<S> vals(static_cast<std::size_t>(rows * cout));
    {
        ConstMatMap<S> X(gathered.data(), rows, cin);
        ConstMatMap<S> W(weight.data(), cin, cout);
        MatMap<S> O(vals.data(), rows, cout);
        O.noalias() = X * W;
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> B(bias.data(), cout);
        O.rowwise() += B;
    }

    bool track = detail::should_track<S>({&x, &weight, &bias});
    Tensor<S> out = detail::finish(Tensor<S>({ho, wo, cout}, std::move(vals)), track);
    if (track) {
        auto gathered_ptr = std::make_shared<std::vector<S>>(std::move(gathered));
        active_tape<S>()->record({x.id(), weight.id(), bias.id()}, out.id(),
                                 [x, weight, bias, out, gathered_ptr, rows, cin, cout, ho, wo, w,
                                  stride]() {
            ConstMatMap<S> G(out.grad()->data(), rows, cout);
            if (weight.requires_grad()) {
                ConstMatMap<S> X(gathered_ptr->data(), rows, cin);
                MatMap<S> GW(weight.grad()->data(), cin, cout);
                GW.noalias() += X.transpose() * G;
            }
            if (bias.requires_grad()) {
                Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> GB(bias.grad()->data(), cout);
                GB += G.colwise().sum();
            }
            if (x.requires_grad()) {
                MatrixRM<S> GX = G * ConstMatMap<S>(weight.data(), cin, cout).transpose();
                std::vector<S>& gx = *x.grad();
                for (Index i = 0; i < ho; ++i)
                    for (Index j = 0; j < wo; ++j) {
                        S* dst = gx.data() + ((i * stride) * w + (j * stride)) * cin;
                        const S* srcg = GX.data() + (i * wo + j) * cin;
                        for (Index c = 0; c < cin; ++c) dst[c] += srcg[c];
                    }
            }
        });
    }
    return out;
}

// Nearest-neighbor upsampling by an integer factor; accepts [H, W] or
// [H, W, C]. Backward sums each factor x factor block.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, Index factor) {
    if (factor < 1) throw ValidationError("upsample_nearest: factor must be >= 1");
    if (x.rank() != 2 && x.rank() != 3)
        throw ShapeError("upsample_nearest: input must be [H, W] or [H, W, C], got " +
                         shape_str(x.shape()));
    Index h = x.dim(0), w = x.dim(1);
    Index c = x.rank() == 3 ? x.dim(2) : 1;
    Shape out_shape = x.shape();
    out_shape[0] = h * factor;
    out_shape[1] = w * factor;
    std::vector<S> vals(static_cast<std::size_t>(x.numel() * factor * factor));
    const S* src = x.data();
    for (Index i = 0; i < h * factor; ++i)
        for (Index j = 0; j < w * factor; ++j) {
            const S* px = src + ((i / factor) * w + (j / factor)) * c;
            std::copy(px, px + c, vals.begin() + (i * w * factor + j) * c);
        }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, h, w, c, factor]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (Index i = 0; i < h * factor; ++i)
                for (Index j = 0; j < w * factor; ++j)
                    for (Index ch = 0; ch < c; ++ch)
                        gx[static_cast<std::size_t>(((i / factor) * w + (j / factor)) * c + ch)] +=
                            g[static_cast<std::size_t>((i * w * factor + j) * c + ch)];
        });
    }
    return out;
}

// Bilinear alternative (half-pixel centers, edge clamp); selected by the
// upsample-mode flag where a caller offers it.
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, Index factor) {
    if (factor < 1) throw ValidationError("upsample_bilinear: factor must be >= 1");
    if (x.rank() != 2 && x.rank() != 3)
        throw ShapeError("upsample_bilinear: input must be [H, W] or [H, W, C], got " +
                         shape_str(x.shape()));
    Index h = x.dim(0), w = x.dim(1);
    Index c = x.rank() == 3 ? x.dim(2) : 1;
    Index H = h * factor, W = w * factor;
    Shape out_shape = x.shape();
    out_shape[0] = H;
    out_shape[1] = W;

    struct Tap {
        Index lo, hi;
        double t;
    };
    auto taps_for = [&](Index n_out, Index n_in, Index factor_) {
        std::vector<Tap> taps(static_cast<std::size_t>(n_out));
        for (Index o = 0; o < n_out; ++o) {
            double srcf = (static_cast<double>(o) + 0.5) / static_cast<double>(factor_) - 0.5;
            srcf = std::min(std::max(srcf, 0.0), static_cast<double>(n_in - 1));
            Index lo = static_cast<Index>(srcf);
            Index hi = std::min(lo + 1, n_in - 1);
            taps[static_cast<std::size_t>(o)] = Tap{lo, hi, srcf - static_cast<double>(lo)};
        }
        return taps;
    };
    auto row_taps = taps_for(H, h, factor);
    auto col_taps = taps_for(W, w, factor);

    std::vector<S> vals(static_cast<std::size_t>(H * W * c));
    const S* src = x.data();
    for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
            const Tap& ti = row_taps[static_cast<std::size_t>(i)];
            const Tap& tj = col_taps[static_cast<std::size_t>(j)];
            for (Index ch = 0; ch < c; ++ch) {
                double v00 = src[(ti.lo * w + tj.lo) * c + ch];
                double v01 = src[(ti.lo * w + tj.hi) * c + ch];
                double v10 = src[(ti.hi * w + tj.lo) * c + ch];
                double v11 = src[(ti.hi * w + tj.hi) * c + ch];
                double v = (1 - ti.t) * ((1 - tj.t) * v00 + tj.t * v01) +
                           ti.t * ((1 - tj.t) * v10 + tj.t * v11);
                vals[static_cast<std::size_t>((i * W + j) * c + ch)] = static_cast<S>(v);
            }
        }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out = detail::finish(Tensor<S>(std::move(out_shape), std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(),
                                 [x, out, row_taps, col_taps, H, W, w, c]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (Index i = 0; i < H; ++i)
                for (Index j = 0; j < W; ++j) {
                    const auto& ti = row_taps[static_cast<std::size_t>(i)];
                    const auto& tj = col_taps[static_cast<std::size_t>(j)];
                    for (Index ch = 0; ch < c; ++ch) {
                        double go = g[static_cast<std::size_t>((i * W + j) * c + ch)];
                        gx[static_cast<std::size_t>((ti.lo * w + tj.lo) * c + ch)] +=
                            static_cast<S>(go * (1 - ti.t) * (1 - tj.t));
                        gx[static_cast<std::size_t>((ti.lo * w + tj.hi) * c + ch)] +=
                            static_cast<S>(go * (1 - ti.t) * tj.t);
                        gx[static_cast<std::size_t>((ti.hi * w + tj.lo) * c + ch)] +=
                            static_cast<S>(go * ti.t * (1 - tj.t));
                        gx[static_cast<std::size_t>((ti.hi * w + tj.hi) * c + ch)] +=
                            static_cast<S>(go * ti.t * tj.t);
                    }
                }
        });
    }
    return out;
}

// Block rearrange [H, W, C] -> [H/b, W/b, C*b*b]; pure index permutation.
template <typename S>
Tensor<S> space_to_depth(const Tensor<S>& x, Index block) {
    if (x.rank() != 3)
        throw ShapeError("space_to_depth: input must be [H, W, C], got " + shape_str(x.shape()));
    Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (block < 1 || h % block != 0 || w % block != 0)
        throw ShapeError("space_to_depth: block " + std::to_string(block) +
                         " does not divide " + shape_str(x.shape()));
    Index ho = h / block, wo = w / block;
    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    const S* src = x.data();
    for (Index I = 0; I < ho; ++I)
        for (Index J = 0; J < wo; ++J)
            for (Index di = 0; di < block; ++di)
                for (Index dj = 0; dj < block; ++dj) {
                    const S* px = src + ((I * block + di) * w + (J * block + dj)) * c;
                    S* dst = vals.data() + (I * wo + J) * c * block * block +
                             (di * block + dj) * c;
                    std::copy(px, px + c, dst);
                }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out =
        detail::finish(Tensor<S>({ho, wo, c * block * block}, std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, ho, wo, block, c, w]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (Index I = 0; I < ho; ++I)
                for (Index J = 0; J < wo; ++J)
                    for (Index di = 0; di < block; ++di)
                        for (Index dj = 0; dj < block; ++dj)
                            for (Index ch = 0; ch < c; ++ch)
                                gx[static_cast<std::size_t>(
                                    ((I * block + di) * w + (J * block + dj)) * c + ch)] +=
                                    g[static_cast<std::size_t>((I * wo + J) * c * block * block +
                                                               (di * block + dj) * c + ch)];
        });
    }
    return out;
}

// Inverse of space_to_depth: [H, W, C*b*b] -> [H*b, W*b, C].
template <typename S>
Tensor<S> depth_to_space(const Tensor<S>& x, Index block) {
    if (x.rank() != 3)
        throw ShapeError("depth_to_space: input must be [H, W, C*b*b], got " + shape_str(x.shape()));
    Index h = x.dim(0), w = x.dim(1), cb = x.dim(2);
    if (block < 1 || cb % (block * block) != 0)
        throw ShapeError("depth_to_space: channels " + std::to_string(cb) +
                         " not divisible by block^2");
    Index c = cb / (block * block);
    std::vector<S> vals(static_cast<std::size_t>(x.numel()));
    const S* src = x.data();
    for (Index I = 0; I < h; ++I)
        for (Index J = 0; J < w; ++J)
            for (Index di = 0; di < block; ++di)
                for (Index dj = 0; dj < block; ++dj) {
                    const S* px = src + (I * w + J) * cb + (di * block + dj) * c;
                    S* dst = vals.data() + ((I * block + di) * w * block + (J * block + dj)) * c;
                    std::copy(px, px + c, dst);
                }
    bool track = detail::should_track<S>({&x});
    Tensor<S> out =
        detail::finish(Tensor<S>({h * block, w * block, c}, std::move(vals)), track);
    if (track) {
        active_tape<S>()->record({x.id()}, out.id(), [x, out, h, w, cb, block, c]() {
            if (!x.requires_grad()) return;
            const std::vector<S>& g = *out.grad();
            std::vector<S>& gx = *x.grad();
            for (Index I = 0; I < h; ++I)
                for (Index J = 0; J < w; ++J)
                    for (Index di = 0; di < block; ++di)
                        for (Index dj = 0; dj < block; ++dj)
                            for (Index ch = 0; ch < c; ++ch)
                                gx[static_cast<std::size_t>((I * w + J) * cb +
                                                            (di * block + dj) * c + ch)] +=
                                    g[static_cast<std::size_t>(
                                        ((I * block + di) * w * block + (J * block + dj)) * c +
                                        ch)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------
// Scaled dot-product attention (single head, composite)
// ---------------------------------------------------------------------

template <typename S>
struct AttentionResult {
    Tensor<S> output;  // [Tq, dv]
    Tensor<S> weights; // [Tq, Tk], rows sum to 1
};

template <typename S>
AttentionResult<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention: q/k/v must be rank 2");
    if (q.dim(1) != k.dim(1))
        throw ShapeError("attention: key dim mismatch: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("attention: key/value count mismatch: " + shape_str(k.shape()) +
                         " vs " + shape_str(v.shape()));
    double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Tensor<S> scores = scalar_mul(matmul(q, transpose(k)), scale);
    Tensor<S> weights = softmax_lastdim(scores);
    return AttentionResult<S>{matmul(weights, v), weights};
}

} // namespace tpseg
