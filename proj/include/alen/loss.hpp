#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "alen/ops.hpp"

namespace alen {

struct LossConfig {
    double alpha = 0.85;
    std::size_t ssim_window = 11;
    double ssim_sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
        if (ssim_window < 3 || ssim_window % 2 == 0) throw ConfigError("ssim_window must be odd and >= 3");
        if (!(ssim_sigma > 0)) throw ConfigError("ssim_sigma must be positive");
        if (!(c1 > 0) || !(c2 > 0)) throw ConfigError("SSIM stabilizers must be positive");
    }
};

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

/// Normalized 2-D Gaussian window as a (1,1,k,k) conv kernel.
template <std::floating_point T>
Tensor<T> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> g(size);
    const double center = static_cast<double>(size / 2);
    double total = 0;
    for (std::size_t i = 0; i < size; ++i) {
        double d = static_cast<double>(i) - center;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    std::vector<T> k(size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) k[y * size + x] = static_cast<T>(g[y] * g[x]);
    return Tensor<T>::from_data({1, 1, size, size}, std::move(k));
}

} // namespace detail

template <std::floating_point T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred.shape(), target.shape(), "l1_loss");
    return ops::mean(ops::abs(ops::sub(pred, target)));
}

/// Per-channel SSIM over valid (unpadded) Gaussian windows; shape (N, C, H-k+1, W-k+1).
template <std::floating_point T>
Tensor<T> ssim_map(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    cfg.validate();
    detail::require_same_shape(pred.shape(), target.shape(), "ssim_map");
    const Shape s = pred.shape();
    if (s.h < cfg.ssim_window || s.w < cfg.ssim_window)
        throw InputError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than window " +
                         std::to_string(cfg.ssim_window));
    using namespace ops;
    const Shape planes{s.n * s.c, 1, s.h, s.w};
    auto x = reshape(pred, planes);
    auto y = reshape(target, planes);
    auto win = alen::detail::gaussian_window<T>(cfg.ssim_window, cfg.ssim_sigma);
    const Tensor<T> none;
    auto blur = [&](const Tensor<T>& t) { return conv2d(t, win, none); };
    auto mu_x = blur(x);
    auto mu_y = blur(y);
    auto mu_xx = mul(mu_x, mu_x);
    auto mu_yy = mul(mu_y, mu_y);
    auto mu_xy = mul(mu_x, mu_y);
    auto var_x = sub(blur(mul(x, x)), mu_xx);
    auto var_y = sub(blur(mul(y, y)), mu_yy);
    auto cov = sub(blur(mul(x, y)), mu_xy);
    const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
    auto num = mul(add_scalar(scale(mu_xy, T(2)), c1), add_scalar(scale(cov, T(2)), c2));
    auto den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(var_x, var_y), c2));
    auto map = div(num, den);
    const Shape m = map.shape();
    return reshape(map, {s.n, s.c, m.h, m.w});
}

template <std::floating_point T>
Tensor<T> ssim_metric(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    return ops::mean(ssim_map(pred, target, cfg));
}

/// alpha * l1 + (1 - alpha) * (1 - ssim).
inline double combine_terms(double l1, double ssim, double alpha) { return alpha * l1 + (1.0 - alpha) * (1.0 - ssim); }

/// Weighted L1 + SSIM loss, averaged over the batch.
template <std::floating_point T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    cfg.validate();
    using namespace ops;
    const T alpha = static_cast<T>(cfg.alpha);
    auto l1 = l1_loss(pred, target);
    auto ssim_term = add_scalar(scale(ssim_metric(pred, target, cfg), T(-1)), T(1));
    return add(scale(l1, alpha), scale(ssim_term, T(1) - alpha));
}

template <std::floating_point T>
double mse(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred.shape(), target.shape(), "mse");
    double acc = 0;
    auto a = pred.data();
    auto b = target.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double data_range = 1.0) {
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse_value);
}

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
template <std::floating_point T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double data_range = 1.0) {
    return psnr_from_mse(mse(pred, target), data_range);
}

/// SSIM evaluated in double precision for reporting.
template <std::floating_point T>
double ssim_value(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    return ssim_metric(pred.template cast<double>(), target.template cast<double>(), cfg).item();
}

} // namespace alen
