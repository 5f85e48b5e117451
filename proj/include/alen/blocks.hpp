#pragma once

// Attention and pooling blocks: channel attention (squeeze-excitation style),
// embedded-Gaussian non-local operation, the mixed attention block combining
// both, and the inverted shuffle layer (space-to-depth followed by a 1x1 conv).

#include <cstddef>
#include <string>

#include "alen/ops.hpp"

namespace alen {

/// Two bottleneck FC layers stored as 1x1 conv weights: fc1 (C/r, C), fc2 (C, C/r).
template <std::floating_point T>
struct CabParams {
    Tensor<T> fc1_weight;
    Tensor<T> fc1_bias;
    Tensor<T> fc2_weight;
    Tensor<T> fc2_bias;
    std::size_t reduction = 4;

    std::size_t channels() const { return fc1_weight.shape().c; }
};

template <std::floating_point T>
struct NonLocalParams {
    Tensor<T> theta; // (C/2, C, 1, 1)
    Tensor<T> phi;   // (C/2, C, 1, 1)
    Tensor<T> g;     // (C/2, C, 1, 1)
    Tensor<T> out;   // (C, C/2, 1, 1)
    std::size_t downsample = 2;
};

template <std::floating_point T>
struct MabParams {
    NonLocalParams<T> nonlocal;
    CabParams<T> cab; // over 2C channels
    Tensor<T> fuse_weight; // (C, 2C, 1, 1)
    Tensor<T> fuse_bias;
};

template <std::floating_point T>
struct IslParams {
    Tensor<T> proj_weight; // (Cout, 4*Cin, 1, 1)
    Tensor<T> proj_bias;
};

template <std::floating_point T>
Tensor<T> channel_attention_forward(const Tensor<T>& x, const CabParams<T>& p) {
    const std::size_t C = x.shape().c;
    if (p.reduction == 0 || C % p.reduction != 0)
        throw ConfigError("channel attention: reduction " + std::to_string(p.reduction) + " does not divide " +
                          std::to_string(C) + " channels");
    const std::size_t hidden = C / p.reduction;
    if (p.fc1_weight.shape() != Shape{hidden, C, 1, 1} || p.fc2_weight.shape() != Shape{C, hidden, 1, 1})
        throw DimensionError("channel attention: fc weights " + p.fc1_weight.shape().str() + ", " +
                             p.fc2_weight.shape().str() + " do not match " + std::to_string(C) + " channels");
    auto squeezed = ops::global_avg_pool(x);
    auto hidden_act = ops::relu(ops::conv2d(squeezed, p.fc1_weight, p.fc1_bias));
    auto gate = ops::sigmoid(ops::conv2d(hidden_act, p.fc2_weight, p.fc2_bias));
    return ops::mul(x, gate);
}

namespace detail {

template <std::floating_point T>
void check_non_local(const Shape& s, const NonLocalParams<T>& p) {
    const std::size_t d = p.downsample;
    if (d == 0 || s.h % d != 0 || s.w % d != 0)
        throw DimensionError("non-local: spatial dims " + s.str() + " not divisible by downsample factor " +
                             std::to_string(d));
    const std::size_t inner = p.theta.shape().n;
    if (p.phi.shape().n != inner || p.g.shape().n != inner || p.theta.shape().c != s.c || p.out.shape().n != s.c)
        throw DimensionError("non-local: projection shapes do not match " + std::to_string(s.c) + " channels");
}

// softmax_j(q_i . k_j) with shape (N, 1, HW, HW/d^2).
template <std::floating_point T>
Tensor<T> non_local_scores(const Tensor<T>& x, const Tensor<T>& pooled, const NonLocalParams<T>& p) {
    const Shape s = x.shape();
    const Tensor<T> none;
    const std::size_t inner = p.theta.shape().n;
    // (N, inner, H, W) -> (N, 1, inner, HW) -> (N, 1, HW, inner)
    auto q = ops::transpose_hw(ops::reshape(ops::conv2d(x, p.theta, none), {s.n, 1, inner, s.plane()}));
    auto k = ops::reshape(ops::conv2d(pooled, p.phi, none), {s.n, 1, inner, pooled.shape().plane()});
    return ops::softmax(ops::matmul(q, k), 3);
}

} // namespace detail

/// Attention weights of the non-local op, one row per query position.
template <std::floating_point T>
Tensor<T> non_local_attention(const Tensor<T>& x, const NonLocalParams<T>& p) {
    detail::check_non_local(x.shape(), p);
    return detail::non_local_scores(x, ops::avg_pool(x, p.downsample), p);
}

/// Keys and values are computed from the d-times average-pooled input; queries
/// use every position. Output is x + out(attention * values).
template <std::floating_point T>
Tensor<T> non_local_forward(const Tensor<T>& x, const NonLocalParams<T>& p) {
    const Shape s = x.shape();
    detail::check_non_local(s, p);
    const Tensor<T> none;
    const std::size_t inner = p.theta.shape().n;
    auto pooled = ops::avg_pool(x, p.downsample);
    auto attention = detail::non_local_scores(x, pooled, p);
    auto v = ops::transpose_hw(ops::reshape(ops::conv2d(pooled, p.g, none), {s.n, 1, inner, pooled.shape().plane()}));
    // (N,1,HW,inner) -> (N,1,inner,HW) -> (N,inner,H,W)
    auto y = ops::reshape(ops::transpose_hw(ops::matmul(attention, v)), {s.n, inner, s.h, s.w});
    return ops::add(x, ops::conv2d(y, p.out, none));
}

template <std::floating_point T>
Tensor<T> mixed_attention_forward(const Tensor<T>& x, const MabParams<T>& p) {
    auto y = non_local_forward(x, p.nonlocal);
    auto z = ops::concat_channels<T>({x, y});
    if (p.cab.channels() != z.shape().c)
        throw DimensionError("mixed attention: channel attention expects " + std::to_string(p.cab.channels()) +
                             " channels, concatenation has " + std::to_string(z.shape().c));
    auto gated = channel_attention_forward(z, p.cab);
    return ops::conv2d(gated, p.fuse_weight, p.fuse_bias);
}

template <std::floating_point T>
Tensor<T> inverted_shuffle_forward(const Tensor<T>& x, const IslParams<T>& p) {
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
        throw DimensionError("inverted shuffle: odd spatial dims " + s.str());
    if (p.proj_weight.shape().c != 4 * s.c)
        throw DimensionError("inverted shuffle: projection expects " + std::to_string(p.proj_weight.shape().c) +
                             " channels, unshuffled input has " + std::to_string(4 * s.c));
    return ops::conv2d(ops::pixel_unshuffle(x, 2), p.proj_weight, p.proj_bias);
}

} // namespace alen
