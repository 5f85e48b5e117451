#pragma once

// Differentiable primitives over Tensor<T>. Every kernel writes each output
// element from a single worker with a fixed accumulation order, so results are
// bitwise reproducible for any worker count.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "alen/parallel.hpp"
#include "alen/tensor.hpp"

namespace alen::ops {

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

template <typename T>
void accumulate(Node<T>& in, const std::vector<T>& delta) {
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
std::vector<T> unary_map(const Tensor<T>& x, auto&& f) {
    std::vector<T> out(x.numel());
    auto d = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
    return out;
}

// Strides of b when broadcast against a (0 on broadcast dimensions).
inline std::array<std::size_t, 4> broadcast_strides(const Shape& a, const Shape& b, const char* op) {
    auto ad = a.dims();
    auto bd = b.dims();
    std::array<std::size_t, 4> raw{b.c * b.h * b.w, b.h * b.w, b.w, 1};
    std::array<std::size_t, 4> s{};
    for (int k = 0; k < 4; ++k) {
        require(bd[k] == ad[k] || bd[k] == 1,
                std::string(op) + ": cannot broadcast " + b.str() + " against " + a.str());
        s[k] = bd[k] == 1 && ad[k] != 1 ? 0 : raw[k];
    }
    return s;
}

template <typename T, typename F>
void for_each_broadcast(const Shape& a, const std::array<std::size_t, 4>& bs, F&& f) {
    std::size_t ia = 0;
    for (std::size_t n = 0; n < a.n; ++n)
        for (std::size_t c = 0; c < a.c; ++c)
            for (std::size_t h = 0; h < a.h; ++h) {
                std::size_t ib = n * bs[0] + c * bs[1] + h * bs[2];
                for (std::size_t w = 0; w < a.w; ++w, ++ia, ib += bs[3]) f(ia, ib);
            }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = detail::unary_map(x, [](T v) { return v > T(0) ? v : T(0); });
    auto xn = x.node();
    return make_result<T>("relu", x.shape(), std::move(out), {xn}, [xn](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->data[i] > T(0)) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = detail::unary_map(x, [](T v) {
        // Split by sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
    });
    auto xn = x.node();
    return make_result<T>("sigmoid", x.shape(), std::move(out), {xn}, [xn](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            T s = self.data[i];
            g[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    auto out = detail::unary_map(x, [](T v) { return std::abs(v); });
    auto xn = x.node();
    return make_result<T>("abs", x.shape(), std::move(out), {xn}, [xn](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            T v = xn->data[i];
            if (v > T(0))
                g[i] += self.grad[i];
            else if (v < T(0))
                g[i] -= self.grad[i];
        }
    });
}

/// Gradient passes where lo <= x <= hi and is zero outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    auto out = detail::unary_map(x, [=](T v) { return std::min(hi, std::max(lo, v)); });
    auto xn = x.node();
    return make_result<T>("clamp", x.shape(), std::move(out), {xn}, [xn, lo, hi](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->data[i] >= lo && xn->data[i] <= hi) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    auto out = detail::unary_map(x, [=](T v) { return v * s; });
    auto xn = x.node();
    return make_result<T>("scale", x.shape(), std::move(out), {xn}, [xn, s](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    auto out = detail::unary_map(x, [=](T v) { return v + s; });
    auto xn = x.node();
    return make_result<T>("add_scalar", x.shape(), std::move(out), {xn}, [xn](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

namespace detail {

enum class Binary { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
    auto bs = broadcast_strides(a.shape(), b.shape(), name);
    std::vector<T> out(a.numel());
    auto ad = a.data();
    auto bd = b.data();
    for_each_broadcast<T>(a.shape(), bs, [&](std::size_t ia, std::size_t ib) {
        switch (kind) {
        case Binary::add: out[ia] = ad[ia] + bd[ib]; break;
        case Binary::sub: out[ia] = ad[ia] - bd[ib]; break;
        case Binary::mul: out[ia] = ad[ia] * bd[ib]; break;
        case Binary::div: out[ia] = ad[ia] / bd[ib]; break;
        }
    });
    auto an = a.node();
    auto bn = b.node();
    Shape as = a.shape();
    return make_result<T>(name, as, std::move(out), {an, bn}, [an, bn, bs, as, kind](const Node<T>& self) {
        // Both gradients are computed before accumulation so that a == b works.
        std::vector<T> ga, gb;
        if (an->requires_grad) ga.assign(an->data.size(), T(0));
        if (bn->requires_grad) gb.assign(bn->data.size(), T(0));
        for_each_broadcast<T>(as, bs, [&](std::size_t ia, std::size_t ib) {
            T g = self.grad[ia];
            T av = an->data[ia];
            T bv = bn->data[ib];
            switch (kind) {
            case Binary::add:
                if (!ga.empty()) ga[ia] += g;
                if (!gb.empty()) gb[ib] += g;
                break;
            case Binary::sub:
                if (!ga.empty()) ga[ia] += g;
                if (!gb.empty()) gb[ib] -= g;
                break;
            case Binary::mul:
                if (!ga.empty()) ga[ia] += g * bv;
                if (!gb.empty()) gb[ib] += g * av;
                break;
            case Binary::div:
                if (!ga.empty()) ga[ia] += g / bv;
                if (!gb.empty()) gb[ib] -= g * av / (bv * bv);
                break;
            }
        });
        if (!ga.empty()) accumulate(*an, ga);
        if (!gb.empty()) accumulate(*bn, gb);
    });
}

} // namespace detail

/// b broadcasts against a along any dimension where b has extent 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::mul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, detail::Binary::div, "div");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    auto xn = x.node();
    return make_result<T>("sum", {1, 1, 1, 1}, {s}, {xn}, [xn](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require(shape.numel() == x.numel(), "reshape: " + x.shape().str() + " -> " + shape.str());
    std::vector<T> out(x.data().begin(), x.data().end());
    auto xn = x.node();
    return make_result<T>("reshape", shape, std::move(out), {xn}, [xn](const Node<T>& self) {
        detail::accumulate(*xn, self.grad);
    });
}

/// Swaps the two spatial axes: (N,C,H,W) -> (N,C,W,H).
template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
    const Shape s = x.shape();
    const Shape o{s.n, s.c, s.w, s.h};
    std::vector<T> out(x.numel());
    auto d = x.data();
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t i = 0; i < s.h; ++i)
            for (std::size_t j = 0; j < s.w; ++j) out[p * s.plane() + j * s.h + i] = d[p * s.plane() + i * s.w + j];
    auto xn = x.node();
    return make_result<T>("transpose_hw", o, std::move(out), {xn}, [xn, s](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t p = 0; p < s.n * s.c; ++p)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j)
                    g[p * s.plane() + i * s.w + j] += self.grad[p * s.plane() + j * s.h + i];
    });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    detail::require(!xs.empty(), "concat_channels: no inputs");
    Shape o = xs.front().shape();
    o.c = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        detail::require(s.n == o.n && s.h == o.h && s.w == o.w,
                        "concat_channels: " + s.str() + " does not match " + xs.front().shape().str());
        o.c += s.c;
    }
    std::vector<T> out(o.numel());
    std::vector<NodePtr<T>> nodes;
    std::size_t c0 = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        for (std::size_t n = 0; n < s.n; ++n)
            std::copy_n(x.data().begin() + n * s.c * s.plane(), s.c * s.plane(),
                        out.begin() + o.index(n, c0, 0, 0));
        c0 += s.c;
        nodes.push_back(x.node());
    }
    return make_result<T>("concat_channels", o, std::move(out), nodes, [nodes, o](const Node<T>& self) {
        std::size_t c0 = 0;
        for (const auto& in : nodes) {
            const Shape& s = in->shape;
            if (in->requires_grad) {
                auto& g = in->ensure_grad();
                for (std::size_t n = 0; n < s.n; ++n) {
                    const T* src = self.grad.data() + o.index(n, c0, 0, 0);
                    T* dst = g.data() + n * s.c * s.plane();
                    for (std::size_t i = 0; i < s.c * s.plane(); ++i) dst[i] += src[i];
                }
            }
            c0 += s.c;
        }
    });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape s = x.shape();
    detail::require(s.plane() > 0, "global_avg_pool: empty spatial extent");
    std::vector<T> out(s.n * s.c);
    auto d = x.data();
    const T inv = T(1) / static_cast<T>(s.plane());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < s.plane(); ++i) acc += d[p * s.plane() + i];
        out[p] = acc * inv;
    }
    auto xn = x.node();
    return make_result<T>("global_avg_pool", {s.n, s.c, 1, 1}, std::move(out), {xn},
                          [xn, s, inv](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t p = 0; p < s.n * s.c; ++p)
            for (std::size_t i = 0; i < s.plane(); ++i) g[p * s.plane() + i] += self.grad[p] * inv;
    });
}

/// Average pooling with kernel = stride = d. d == 1 returns the input unchanged.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t d) {
    const Shape s = x.shape();
    detail::require(d >= 1 && s.h % d == 0 && s.w % d == 0,
                    "avg_pool: spatial dims " + s.str() + " not divisible by " + std::to_string(d));
    if (d == 1) return x;
    const Shape o{s.n, s.c, s.h / d, s.w / d};
    std::vector<T> out(o.numel());
    auto src = x.data();
    const T inv = T(1) / static_cast<T>(d * d);
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < o.h; ++y)
            for (std::size_t xx = 0; xx < o.w; ++xx) {
                T acc = 0;
                for (std::size_t dy = 0; dy < d; ++dy)
                    for (std::size_t dx = 0; dx < d; ++dx)
                        acc += src[p * s.plane() + (y * d + dy) * s.w + xx * d + dx];
                out[p * o.plane() + y * o.w + xx] = acc * inv;
            }
    auto xn = x.node();
    return make_result<T>("avg_pool", o, std::move(out), {xn}, [xn, s, o, d, inv](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t p = 0; p < s.n * s.c; ++p)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t xx = 0; xx < s.w; ++xx)
                    g[p * s.plane() + y * s.w + xx] += self.grad[p * o.plane() + (y / d) * o.w + xx / d] * inv;
    });
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first element in row-major order.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
    const Shape s = x.shape();
    detail::require(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2: odd spatial dims " + s.str());
    const Shape o{s.n, s.c, s.h / 2, s.w / 2};
    std::vector<T> out(o.numel());
    std::vector<std::size_t> arg(o.numel());
    auto src = x.data();
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < o.h; ++y)
            for (std::size_t xx = 0; xx < o.w; ++xx) {
                std::size_t best = p * s.plane() + 2 * y * s.w + 2 * xx;
                const std::size_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
                for (std::size_t k : cand)
                    if (src[k] > src[best]) best = k;
                std::size_t oi = p * o.plane() + y * o.w + xx;
                out[oi] = src[best];
                arg[oi] = best;
            }
    auto xn = x.node();
    return make_result<T>("max_pool2", o, std::move(out), {xn}, [xn, arg = std::move(arg)](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Channel/space rearrangement

/// out[n, c*r*r + dy*r + dx, y, x] = in[n, c, y*r + dy, x*r + dx]
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
    const Shape s = x.shape();
    detail::require(r >= 1 && s.h % r == 0 && s.w % r == 0,
                    "pixel_unshuffle: spatial dims " + s.str() + " not divisible by " + std::to_string(r));
    const Shape o{s.n, s.c * r * r, s.h / r, s.w / r};
    std::vector<std::size_t> src_index(o.numel());
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t dy = 0; dy < r; ++dy)
                for (std::size_t dx = 0; dx < r; ++dx)
                    for (std::size_t y = 0; y < o.h; ++y)
                        for (std::size_t xx = 0; xx < o.w; ++xx)
                            src_index[o.index(n, c * r * r + dy * r + dx, y, xx)] = s.index(n, c, y * r + dy, xx * r + dx);
    std::vector<T> out(o.numel());
    auto d = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[src_index[i]];
    auto xn = x.node();
    return make_result<T>("pixel_unshuffle", o, std::move(out), {xn},
                          [xn, idx = std::move(src_index)](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

/// Inverse of pixel_unshuffle with the same channel convention.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    const Shape s = x.shape();
    detail::require(r >= 1 && s.c % (r * r) == 0,
                    "pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by " + std::to_string(r * r));
    const Shape o{s.n, s.c / (r * r), s.h * r, s.w * r};
    std::vector<std::size_t> src_index(o.numel());
    for (std::size_t n = 0; n < o.n; ++n)
        for (std::size_t c = 0; c < o.c; ++c)
            for (std::size_t dy = 0; dy < r; ++dy)
                for (std::size_t dx = 0; dx < r; ++dx)
                    for (std::size_t y = 0; y < s.h; ++y)
                        for (std::size_t xx = 0; xx < s.w; ++xx)
                            src_index[o.index(n, c, y * r + dy, xx * r + dx)] = s.index(n, c * r * r + dy * r + dx, y, xx);
    std::vector<T> out(o.numel());
    auto d = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[src_index[i]];
    auto xn = x.node();
    return make_result<T>("pixel_shuffle", o, std::move(out), {xn},
                          [xn, idx = std::move(src_index)](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Softmax and matrix products

/// Softmax along one axis (0=N, 1=C, 2=H, 3=W), with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = 3) {
    if (axis < 0 || axis > 3) throw DimensionError("softmax: axis must be in [0,3]");
    const Shape s = x.shape();
    auto dims = s.dims();
    std::size_t len = dims[axis];
    std::size_t inner = 1;
    for (int k = axis + 1; k < 4; ++k) inner *= dims[k];
    std::size_t outer = s.numel() / std::max<std::size_t>(1, len * inner);
    std::vector<T> out(x.numel());
    auto d = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, d[base + k * inner]);
            T total = 0;
            for (std::size_t k = 0; k < len; ++k) {
                T e = std::exp(d[base + k * inner] - mx);
                out[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
        }
    auto xn = x.node();
    return make_result<T>("softmax", s, std::move(out), {xn}, [xn, outer, inner, len](const Node<T>& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                T dot = 0;
                for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.data[base + k * inner];
                for (std::size_t k = 0; k < len; ++k) {
                    std::size_t j = base + k * inner;
                    g[j] += self.data[j] * (self.grad[j] - dot);
                }
            }
    });
}

/// Batched product over the trailing two axes: (N,C,M,K) x (N,C,K,P) -> (N,C,M,P).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape();
    const Shape bs = b.shape();
    detail::require(as.n == bs.n && as.c == bs.c && as.w == bs.h,
                    "matmul: incompatible shapes " + as.str() + " x " + bs.str());
    const std::size_t batch = as.n * as.c, M = as.h, K = as.w, P = bs.w;
    const Shape o{as.n, as.c, M, P};
    std::vector<T> out(o.numel(), T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    parallel_for(batch * M, K * P, [&](std::size_t bi) {
        std::size_t p = bi / M, i = bi % M;
        T* row = out.data() + (p * M + i) * P;
        const T* arow = ad + (p * M + i) * K;
        const T* bmat = bd + p * K * P;
        for (std::size_t k = 0; k < K; ++k) {
            T av = arow[k];
            const T* brow = bmat + k * P;
            for (std::size_t j = 0; j < P; ++j) row[j] += av * brow[j];
        }
    });
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>("matmul", o, std::move(out), {an, bn}, [an, bn, batch, M, K, P](const Node<T>& self) {
        const T* g = self.grad.data();
        std::vector<T> ga, gb;
        if (an->requires_grad) {
            // dA = dC * B^T
            ga.assign(batch * M * K, T(0));
            parallel_for(batch * M, K * P, [&](std::size_t bi) {
                std::size_t p = bi / M, i = bi % M;
                const T* grow = g + (p * M + i) * P;
                const T* bmat = bn->data.data() + p * K * P;
                T* dst = ga.data() + (p * M + i) * K;
                for (std::size_t k = 0; k < K; ++k) {
                    T acc = 0;
                    const T* brow = bmat + k * P;
                    for (std::size_t j = 0; j < P; ++j) acc += grow[j] * brow[j];
                    dst[k] = acc;
                }
            });
        }
        if (bn->requires_grad) {
            // dB = A^T * dC
            gb.assign(batch * K * P, T(0));
            parallel_for(batch * K, M * P, [&](std::size_t bk) {
                std::size_t p = bk / K, k = bk % K;
                T* dst = gb.data() + (p * K + k) * P;
                for (std::size_t i = 0; i < M; ++i) {
                    T av = an->data[(p * M + i) * K + k];
                    const T* grow = g + (p * M + i) * P;
                    for (std::size_t j = 0; j < P; ++j) dst[j] += av * grow[j];
                }
            });
        }
        if (!ga.empty()) detail::accumulate(*an, ga);
        if (!gb.empty()) detail::accumulate(*bn, gb);
    });
}

// ---------------------------------------------------------------------------
// Convolutions

/// Cross-correlation with zero padding. weight: (Cout, Cin, kh, kw); bias: Cout values
/// in any shape, or an undefined tensor for no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    const Shape is = input.shape();
    const Shape ws = weight.shape();
    detail::require(is.c == ws.c, "conv2d: input has " + std::to_string(is.c) + " channels, weight expects " +
                                      std::to_string(ws.c));
    if (bias.defined()) detail::require(bias.numel() == ws.n, "conv2d: bias length does not match Cout");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (is.h + 2 * padding < ws.h || is.w + 2 * padding < ws.w)
        throw DimensionError("conv2d: kernel " + ws.str() + " larger than padded input " + is.str());
    if ((is.h + 2 * padding - ws.h) % stride != 0 || (is.w + 2 * padding - ws.w) % stride != 0)
        throw ConfigError("conv2d: output size is not exact for input " + is.str() + ", kernel " +
                          std::to_string(ws.h) + "x" + std::to_string(ws.w) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    const std::size_t kh = ws.h, kw = ws.w, Cin = is.c, Cout = ws.n;
    const Shape o{is.n, Cout, (is.h + 2 * padding - kh) / stride + 1, (is.w + 2 * padding - kw) / stride + 1};
    const long pad = static_cast<long>(padding);

    // Valid output range along one axis for a given kernel tap.
    auto range = [stride, pad](std::size_t k, std::size_t in_len, std::size_t out_len) {
        // in = out*stride + k - pad must lie in [0, in_len)
        long lo_num = pad - static_cast<long>(k);
        std::size_t lo = lo_num <= 0 ? 0 : static_cast<std::size_t>((lo_num + stride - 1) / stride);
        long hi_num = static_cast<long>(in_len) - 1 + pad - static_cast<long>(k);
        std::size_t hi = hi_num < 0 ? 0 : std::min(out_len, static_cast<std::size_t>(hi_num) / stride + 1);
        return std::pair{lo, std::max(lo, hi)};
    };

    std::vector<T> out(o.numel());
    const T* xd = input.data().data();
    const T* wd = weight.data().data();
    parallel_for(o.n * Cout, o.plane() * Cin * kh * kw, [&](std::size_t nc) {
        std::size_t n = nc / Cout, co = nc % Cout;
        T* op = out.data() + nc * o.plane();
        T b = bias.defined() ? bias.data()[co] : T(0);
        std::fill(op, op + o.plane(), b);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T* ip = xd + (n * Cin + ci) * is.plane();
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [oy0, oy1] = range(ky, is.h, o.h);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [ox0, ox1] = range(kx, is.w, o.w);
                    const T wv = wd[((co * Cin + ci) * kh + ky) * kw + kx];
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const T* irow = ip + (oy * stride + ky - padding) * is.w;
                        T* orow = op + oy * o.w;
                        if (stride == 1) {
                            const T* src = irow + (ox0 + kx - padding);
                            T* dst = orow + ox0;
                            for (std::size_t i = 0; i < ox1 - ox0; ++i) dst[i] += wv * src[i];
                        } else {
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    });

    auto xn = input.node();
    auto wn = weight.node();
    std::vector<NodePtr<T>> inputs{xn, wn};
    NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
    if (bn) inputs.push_back(bn);
    return make_result<T>("conv2d", o, std::move(out), inputs,
                          [xn, wn, bn, is, o, kh, kw, Cin, Cout, stride, padding, range](const Node<T>& self) {
        const T* g = self.grad.data();
        if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            const T* wd = wn->data.data();
            parallel_for(is.n * Cin, o.plane() * Cout * kh * kw, [&](std::size_t nci) {
                std::size_t n = nci / Cin, ci = nci % Cin;
                T* gp = gx.data() + nci * is.plane();
                for (std::size_t co = 0; co < Cout; ++co) {
                    const T* gop = g + (n * Cout + co) * o.plane();
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        auto [oy0, oy1] = range(ky, is.h, o.h);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            auto [ox0, ox1] = range(kx, is.w, o.w);
                            const T wv = wd[((co * Cin + ci) * kh + ky) * kw + kx];
                            for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                T* grow = gp + (oy * stride + ky - padding) * is.w;
                                const T* orow = gop + oy * o.w;
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    grow[ox * stride + kx - padding] += wv * orow[ox];
                            }
                        }
                    }
                }
            });
        }
        if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            const T* xd = xn->data.data();
            parallel_for(Cout * Cin, o.n * o.plane() * kh * kw, [&](std::size_t cc) {
                std::size_t co = cc / Cin, ci = cc % Cin;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    auto [oy0, oy1] = range(ky, is.h, o.h);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        auto [ox0, ox1] = range(kx, is.w, o.w);
                        T acc = 0;
                        for (std::size_t n = 0; n < o.n; ++n) {
                            const T* ip = xd + (n * Cin + ci) * is.plane();
                            const T* gop = g + (n * Cout + co) * o.plane();
                            for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                const T* irow = ip + (oy * stride + ky - padding) * is.w;
                                const T* orow = gop + oy * o.w;
                                for (std::size_t ox = ox0; ox < ox1; ++ox)
                                    acc += orow[ox] * irow[ox * stride + kx - padding];
                            }
                        }
                        gw[((co * Cin + ci) * kh + ky) * kw + kx] += acc;
                    }
                }
            });
        }
        if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t co = 0; co < Cout; ++co) {
                T acc = 0;
                for (std::size_t n = 0; n < o.n; ++n) {
                    const T* gop = g + (n * Cout + co) * o.plane();
                    for (std::size_t i = 0; i < o.plane(); ++i) acc += gop[i];
                }
                gb[co] += acc;
            }
        }
    });
}

/// Transposed convolution without padding. weight: (Cin, Cout, kh, kw).
/// Output spatial size is (H-1)*stride + k, i.e. exactly stride*H when k == stride.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride = 2) {
    const Shape is = input.shape();
    const Shape ws = weight.shape();
    detail::require(is.c == ws.n, "conv_transpose2d: input has " + std::to_string(is.c) +
                                      " channels, weight expects " + std::to_string(ws.n));
    if (stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
    if (bias.defined()) detail::require(bias.numel() == ws.c, "conv_transpose2d: bias length does not match Cout");
    const std::size_t Cin = is.c, Cout = ws.c, kh = ws.h, kw = ws.w;
    const Shape o{is.n, Cout, (is.h - 1) * stride + kh, (is.w - 1) * stride + kw};

    std::vector<T> out(o.numel());
    const T* xd = input.data().data();
    const T* wd = weight.data().data();
    parallel_for(o.n * Cout, is.plane() * Cin * kh * kw, [&](std::size_t nc) {
        std::size_t n = nc / Cout, co = nc % Cout;
        T* op = out.data() + nc * o.plane();
        T b = bias.defined() ? bias.data()[co] : T(0);
        std::fill(op, op + o.plane(), b);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T* ip = xd + (n * Cin + ci) * is.plane();
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const T wv = wd[((ci * Cout + co) * kh + ky) * kw + kx];
                    for (std::size_t iy = 0; iy < is.h; ++iy) {
                        const T* irow = ip + iy * is.w;
                        T* orow = op + (iy * stride + ky) * o.w + kx;
                        for (std::size_t ix = 0; ix < is.w; ++ix) orow[ix * stride] += wv * irow[ix];
                    }
                }
        }
    });

    auto xn = input.node();
    auto wn = weight.node();
    std::vector<NodePtr<T>> inputs{xn, wn};
    NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
    if (bn) inputs.push_back(bn);
    return make_result<T>("conv_transpose2d", o, std::move(out), inputs,
                          [xn, wn, bn, is, o, Cin, Cout, kh, kw, stride](const Node<T>& self) {
        const T* g = self.grad.data();
        if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            const T* wd = wn->data.data();
            parallel_for(is.n * Cin, is.plane() * Cout * kh * kw, [&](std::size_t nci) {
                std::size_t n = nci / Cin, ci = nci % Cin;
                T* gp = gx.data() + nci * is.plane();
                for (std::size_t co = 0; co < Cout; ++co) {
                    const T* gop = g + (n * Cout + co) * o.plane();
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const T wv = wd[((ci * Cout + co) * kh + ky) * kw + kx];
                            for (std::size_t iy = 0; iy < is.h; ++iy) {
                                T* grow = gp + iy * is.w;
                                const T* orow = gop + (iy * stride + ky) * o.w + kx;
                                for (std::size_t ix = 0; ix < is.w; ++ix) grow[ix] += wv * orow[ix * stride];
                            }
                        }
                }
            });
        }
        if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            const T* xd = xn->data.data();
            parallel_for(Cin * Cout, is.n * is.plane() * kh * kw, [&](std::size_t cc) {
                std::size_t ci = cc / Cout, co = cc % Cout;
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        T acc = 0;
                        for (std::size_t n = 0; n < is.n; ++n) {
                            const T* ip = xd + (n * Cin + ci) * is.plane();
                            const T* gop = g + (n * Cout + co) * o.plane();
                            for (std::size_t iy = 0; iy < is.h; ++iy) {
                                const T* irow = ip + iy * is.w;
                                const T* orow = gop + (iy * stride + ky) * o.w + kx;
                                for (std::size_t ix = 0; ix < is.w; ++ix) acc += irow[ix] * orow[ix * stride];
                            }
                        }
                        gw[((ci * Cout + co) * kh + ky) * kw + kx] += acc;
                    }
            });
        }
        if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t co = 0; co < Cout; ++co) {
                T acc = 0;
                for (std::size_t n = 0; n < o.n; ++n) {
                    const T* gop = g + (n * Cout + co) * o.plane();
                    for (std::size_t i = 0; i < o.plane(); ++i) acc += gop[i];
                }
                gb[co] += acc;
            }
        }
    });
}

} // namespace alen::ops
