#pragma once

// Loop-based reference implementations written independently of the library
// kernels. Everything is plain double arithmetic on flat NCHW arrays.

#include <cmath>
#include <vector>

#include "alen/tensor.hpp"

namespace alen::oracle {

using Flat = std::vector<double>;

inline Flat flat(const Tensor<double>& t) { return Flat(t.data().begin(), t.data().end()); }

/// 1x1 conv: w is (cout, cin), optional bias (cout).
inline Flat pointwise(const Flat& x, Shape s, const Flat& w, std::size_t cout, const Flat* bias = nullptr) {
    Flat out(s.n * cout * s.h * s.w, 0.0);
    const std::size_t hw = s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < hw; ++i) {
                double acc = bias ? (*bias)[o] : 0.0;
                for (std::size_t c = 0; c < s.c; ++c) acc += w[o * s.c + c] * x[(n * s.c + c) * hw + i];
                out[(n * cout + o) * hw + i] = acc;
            }
    return out;
}

inline Flat avg_pool(const Flat& x, Shape s, std::size_t d) {
    const std::size_t ph = s.h / d, pw = s.w / d;
    Flat out(s.n * s.c * ph * pw, 0.0);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x0 = 0; x0 < pw; ++x0) {
                double acc = 0;
                for (std::size_t dy = 0; dy < d; ++dy)
                    for (std::size_t dx = 0; dx < d; ++dx) acc += x[(nc * s.h + y * d + dy) * s.w + x0 * d + dx];
                out[(nc * ph + y) * pw + x0] = acc / static_cast<double>(d * d);
            }
    return out;
}

/// Channel attention: s = sigmoid(W2 relu(W1 mean(x) + b1) + b2); out = x * s.
inline Flat channel_attention(const Flat& x, Shape s, const Flat& w1, const Flat& b1, const Flat& w2, const Flat& b2,
                              std::size_t hidden, Flat* gates = nullptr) {
    const std::size_t hw = s.h * s.w;
    Flat out(x.size());
    if (gates) gates->assign(s.n * s.c, 0.0);
    for (std::size_t n = 0; n < s.n; ++n) {
        Flat pooled(s.c, 0.0), h(hidden, 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < hw; ++i) pooled[c] += x[(n * s.c + c) * hw + i];
            pooled[c] /= static_cast<double>(hw);
        }
        for (std::size_t k = 0; k < hidden; ++k) {
            double acc = b1[k];
            for (std::size_t c = 0; c < s.c; ++c) acc += w1[k * s.c + c] * pooled[c];
            h[k] = acc > 0 ? acc : 0.0;
        }
        for (std::size_t c = 0; c < s.c; ++c) {
            double acc = b2[c];
            for (std::size_t k = 0; k < hidden; ++k) acc += w2[c * hidden + k] * h[k];
            const double gate = 1.0 / (1.0 + std::exp(-acc));
            if (gates) (*gates)[n * s.c + c] = gate;
            for (std::size_t i = 0; i < hw; ++i) out[(n * s.c + c) * hw + i] = x[(n * s.c + c) * hw + i] * gate;
        }
    }
    return out;
}

/// Non-local op as a direct double loop over (query i, key j):
/// y_i = sum_j exp(q_i . k_j) v_j / sum_j exp(q_i . k_j), out = x + W_out y.
/// Keys and values come from the d-times average-pooled input.
inline Flat non_local(const Flat& x, Shape s, const Flat& theta, const Flat& phi, const Flat& g, const Flat& out_w,
                      std::size_t d, std::vector<Flat>* weights = nullptr) {
    const std::size_t inner = s.c / 2, hw = s.h * s.w;
    const Shape ps{s.n, s.c, s.h / d, s.w / d};
    const Flat pooled = avg_pool(x, s, d);
    const std::size_t phw = ps.h * ps.w;
    Flat out(x.size());
    if (weights) weights->clear();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            Flat q(inner, 0.0);
            for (std::size_t k = 0; k < inner; ++k)
                for (std::size_t c = 0; c < s.c; ++c) q[k] += theta[k * s.c + c] * x[(n * s.c + c) * hw + i];
            Flat y(inner, 0.0), row(phw);
            double norm = 0;
            for (std::size_t j = 0; j < phw; ++j) {
                double dot = 0;
                Flat v(inner, 0.0);
                for (std::size_t k = 0; k < inner; ++k) {
                    double key = 0;
                    for (std::size_t c = 0; c < s.c; ++c) {
                        key += phi[k * s.c + c] * pooled[(n * s.c + c) * phw + j];
                        v[k] += g[k * s.c + c] * pooled[(n * s.c + c) * phw + j];
                    }
                    dot += q[k] * key;
                }
                const double f = std::exp(dot);
                row[j] = f;
                norm += f;
                for (std::size_t k = 0; k < inner; ++k) y[k] += f * v[k];
            }
            for (auto& v : y) v /= norm;
            for (auto& v : row) v /= norm;
            if (weights) weights->push_back(row);
            for (std::size_t c = 0; c < s.c; ++c) {
                double acc = x[(n * s.c + c) * hw + i];
                for (std::size_t k = 0; k < inner; ++k) acc += out_w[c * inner + k] * y[k];
                out[(n * s.c + c) * hw + i] = acc;
            }
        }
    }
    return out;
}

/// Space-to-depth with r = 2: channel c*4 + dy*2 + dx holds x[c, 2y+dy, 2x+dx].
inline Flat unshuffle2(const Flat& x, Shape s) {
    const std::size_t h = s.h / 2, w = s.w / 2;
    Flat out(x.size());
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx)
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x0 = 0; x0 < w; ++x0)
                            out[((n * 4 * s.c + c * 4 + dy * 2 + dx) * h + y) * w + x0] =
                                x[((n * s.c + c) * s.h + 2 * y + dy) * s.w + 2 * x0 + dx];
    return out;
}

/// Concatenates two NCHW arrays along channels.
inline Flat concat(const Flat& a, std::size_t ca, const Flat& b, std::size_t cb, Shape s) {
    const std::size_t hw = s.h * s.w;
    Flat out;
    out.reserve(a.size() + b.size());
    for (std::size_t n = 0; n < s.n; ++n) {
        out.insert(out.end(), a.begin() + static_cast<long>(n * ca * hw), a.begin() + static_cast<long>((n + 1) * ca * hw));
        out.insert(out.end(), b.begin() + static_cast<long>(n * cb * hw), b.begin() + static_cast<long>((n + 1) * cb * hw));
    }
    return out;
}

inline double max_abs(const Flat& a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace alen::oracle
