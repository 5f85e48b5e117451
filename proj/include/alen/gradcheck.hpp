#pragma once

// Central finite-difference verification of every backward rule, run in double
// precision. Each check builds a scalar probe loss sum(out * R) with a fixed
// random R, differentiates it once, then perturbs each checked leaf element by
// +/- step and compares (f(x+h) - f(x-h)) / 2h against the analytic gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "alen/blocks.hpp"
#include "alen/loss.hpp"
#include "alen/model.hpp"

namespace alen {

struct GradcheckOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
    // near-zero gradients from turning rounding noise into huge ratios.
    double floor = 1e-3;
    // The whole network crosses many ReLU kinks at the primitive step; a
    // smaller step keeps the differences on one linear piece.
    double network_step = 1e-5;
    double network_fraction = 0.01;
    std::uint64_t seed = 1234;
};

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0;
    std::size_t checked = 0;
    bool passed = false;
};

using Rng = std::mt19937_64;

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = u(rng);
    return Tensor<double>::from_data(s, std::move(v), requires_grad);
}

/// Values with |x| in [margin, 1], random sign; keeps kinks at 0 out of reach of the step.
inline Tensor<double> random_away_from_zero(Shape s, Rng& rng, double margin = 0.1) {
    std::uniform_real_distribution<double> u(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
    return Tensor<double>::from_data(s, std::move(v), true);
}

/// Distinct values spaced well apart (for max pooling).
inline Tensor<double> random_distinct(Shape s, Rng& rng) {
    std::vector<double> v(s.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
    std::shuffle(v.begin(), v.end(), rng);
    return Tensor<double>::from_data(s, std::move(v), true);
}

inline Tensor<double> probe_loss(const Tensor<double>& out, const Tensor<double>& probe) {
    return ops::sum(ops::mul(out, probe));
}

/// Checks d loss / d leaf for every (or a random `fraction` of) leaf element.
inline GradcheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& leaves,
                                       const std::function<Tensor<double>()>& loss_fn, const GradcheckOptions& opt,
                                       double fraction = 1.0, std::uint64_t sample_seed = 0) {
    for (const auto& l : leaves) l.zero_grad();
    loss_fn().backward();
    GradcheckResult res{name, 0.0, 0, true};
    Rng rng(sample_seed);
    std::bernoulli_distribution pick(fraction);
    for (const auto& leaf : leaves) {
        if (!leaf.requires_grad()) continue;
        std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
        if (analytic.empty()) analytic.assign(leaf.numel(), 0.0);
        auto data = leaf.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (fraction < 1.0 && !pick(rng)) continue;
            const double orig = data[i];
            data[i] = orig + opt.step;
            const double up = loss_fn().item();
            data[i] = orig - opt.step;
            const double down = loss_fn().item();
            data[i] = orig;
            const double numeric = (up - down) / (2 * opt.step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric) / denom);
            ++res.checked;
        }
    }
    res.passed = res.checked > 0 && res.max_rel_error < opt.tolerance;
    return res;
}

namespace gradcheck_detail {

inline CabParams<double> random_cab(std::size_t c, std::size_t reduction, Rng& rng) {
    const std::size_t h = c / reduction;
    return {random_tensor({h, c, 1, 1}, rng), random_tensor({1, h, 1, 1}, rng, 0.2, 1.0),
            random_tensor({c, h, 1, 1}, rng), random_tensor({1, c, 1, 1}, rng), reduction};
}

inline NonLocalParams<double> random_non_local(std::size_t c, std::size_t d, Rng& rng) {
    return {random_tensor({c / 2, c, 1, 1}, rng), random_tensor({c / 2, c, 1, 1}, rng),
            random_tensor({c / 2, c, 1, 1}, rng), random_tensor({c, c / 2, 1, 1}, rng), d};
}

inline std::vector<Tensor<double>> leaves_of(const CabParams<double>& p) {
    return {p.fc1_weight, p.fc1_bias, p.fc2_weight, p.fc2_bias};
}
inline std::vector<Tensor<double>> leaves_of(const NonLocalParams<double>& p) { return {p.theta, p.phi, p.g, p.out}; }

template <typename... Vs>
std::vector<Tensor<double>> join(Vs&&... vs) {
    std::vector<Tensor<double>> out;
    (out.insert(out.end(), vs.begin(), vs.end()), ...);
    return out;
}

} // namespace gradcheck_detail

/// The desk-scale network check: a random `fraction` of all parameters on a 16x16 raw input.
inline GradcheckResult check_network(const ModelConfig& cfg, const GradcheckOptions& opt, const std::string& name) {
    Rng rng(opt.seed + 99);
    auto weights = build<double>(cfg);
    // Zero conv biases put units fed only by dead channels exactly on a ReLU kink.
    for (auto& [name, t] : weights.params)
        if (name.ends_with(".bias")) t = random_tensor(t.shape(), rng, -0.1, 0.1);
    const std::size_t side = 2 * cfg.input_multiple() * 2;
    auto input = random_tensor({1, 16, side / 2, side / 2}, rng, 0.0, 1.0, false);
    auto probe = random_tensor({1, 3, side, side}, rng, -1.0, 1.0, false);
    std::vector<Tensor<double>> leaves;
    for (const auto& [_, t] : weights.params) leaves.push_back(t);
    GradcheckOptions net = opt;
    net.step = opt.network_step;
    return check_gradients(
        name, leaves, [&] { return probe_loss(forward(weights, cfg, input, false), probe); }, net, opt.network_fraction,
        opt.seed + 7);
}

/// Every primitive, loss and block, plus the desk-scale network.
inline std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt = {}, bool include_network = true) {
    using namespace ops;
    using gradcheck_detail::join;
    using gradcheck_detail::leaves_of;
    std::vector<GradcheckResult> out;
    Rng rng(opt.seed);
    const Shape s{3, 4, 6, 6};
    auto probe_for = [&](const Shape& shape) { return random_tensor(shape, rng, -1.0, 1.0, false); };

    auto unary = [&](const std::string& name, Tensor<double> x, auto&& f) {
        auto y = f(x);
        auto probe = probe_for(y.shape());
        out.push_back(check_gradients(name, {x}, [&] { return probe_loss(f(x), probe); }, opt));
    };
    auto binary = [&](const std::string& name, Tensor<double> a, Tensor<double> b, auto&& f) {
        auto y = f(a, b);
        auto probe = probe_for(y.shape());
        out.push_back(check_gradients(name, {a, b}, [&] { return probe_loss(f(a, b), probe); }, opt));
    };

    {
        auto x = random_tensor(s, rng);
        auto w = random_tensor({5, 4, 3, 3}, rng);
        auto b = random_tensor({1, 5, 1, 1}, rng);
        auto probe = probe_for({3, 5, 6, 6});
        out.push_back(check_gradients("conv2d", {x, w, b}, [&] { return probe_loss(conv2d(x, w, b, 1, 1), probe); }, opt));
        auto probe2 = probe_for({3, 5, 2, 2});
        out.push_back(check_gradients("conv2d_strided", {x, w, b},
                                      [&] { return probe_loss(conv2d(x, w, b, 3, 0), probe2); }, opt));
    }
    {
        auto x = random_tensor(s, rng);
        auto w = random_tensor({4, 3, 2, 2}, rng);
        auto b = random_tensor({1, 3, 1, 1}, rng);
        auto probe = probe_for({3, 3, 12, 12});
        out.push_back(check_gradients("conv_transpose2d", {x, w, b},
                                      [&] { return probe_loss(conv_transpose2d(x, w, b, 2), probe); }, opt));
    }
    unary("pixel_unshuffle", random_tensor(s, rng), [](const auto& x) { return pixel_unshuffle(x, 2); });
    unary("pixel_shuffle", random_tensor({3, 8, 3, 3}, rng), [](const auto& x) { return pixel_shuffle(x, 2); });
    unary("relu", random_away_from_zero(s, rng), [](const auto& x) { return relu(x); });
    unary("sigmoid", random_tensor(s, rng, -3, 3), [](const auto& x) { return sigmoid(x); });
    unary("abs", random_away_from_zero(s, rng), [](const auto& x) { return ops::abs(x); });
    unary("clamp", random_away_from_zero(s, rng), [](const auto& x) { return clamp(x, -0.05, 0.05 + 2.0); });
    unary("scale", random_tensor(s, rng), [](const auto& x) { return scale(x, -1.7); });
    unary("add_scalar", random_tensor(s, rng), [](const auto& x) { return add_scalar(x, 0.3); });
    binary("add", random_tensor(s, rng), random_tensor(s, rng), [](const auto& a, const auto& b) { return add(a, b); });
    binary("add_broadcast", random_tensor(s, rng), random_tensor({1, 4, 1, 1}, rng),
           [](const auto& a, const auto& b) { return add(a, b); });
    binary("sub", random_tensor(s, rng), random_tensor(s, rng), [](const auto& a, const auto& b) { return sub(a, b); });
    binary("mul", random_tensor(s, rng), random_tensor(s, rng), [](const auto& a, const auto& b) { return mul(a, b); });
    binary("mul_broadcast", random_tensor(s, rng), random_tensor({3, 4, 1, 1}, rng),
           [](const auto& a, const auto& b) { return mul(a, b); });
    binary("div", random_tensor(s, rng), random_tensor(s, rng, 0.5, 1.5),
           [](const auto& a, const auto& b) { return div(a, b); });
    binary("concat_channels", random_tensor(s, rng), random_tensor({3, 2, 6, 6}, rng),
           [](const auto& a, const auto& b) { return concat_channels<double>({a, b}); });
    unary("max_pool2", random_distinct(s, rng), [](const auto& x) { return max_pool2(x); });
    unary("global_avg_pool", random_tensor(s, rng), [](const auto& x) { return global_avg_pool(x); });
    unary("avg_pool", random_tensor(s, rng), [](const auto& x) { return avg_pool(x, 2); });
    unary("softmax", random_tensor(s, rng, -2, 2), [](const auto& x) { return softmax(x, 3); });
    unary("softmax_channels", random_tensor(s, rng, -2, 2), [](const auto& x) { return softmax(x, 1); });
    binary("matmul", random_tensor({3, 4, 5, 6}, rng), random_tensor({3, 4, 6, 2}, rng),
           [](const auto& a, const auto& b) { return matmul(a, b); });
    unary("reshape", random_tensor(s, rng), [](const auto& x) { return reshape(x, {1, 1, 12, 36}); });
    unary("transpose_hw", random_tensor({3, 4, 5, 6}, rng), [](const auto& x) { return transpose_hw(x); });
    unary("sum", random_tensor(s, rng), [](const auto& x) { return scale(sum(x), 1.0); });

    {
        auto pred = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
        auto target = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0, false);
        // Keep every |pred - target| away from the L1 kink.
        auto pd = pred.mutable_data();
        auto td = target.data();
        for (std::size_t i = 0; i < pd.size(); ++i)
            if (std::abs(pd[i] - td[i]) < 0.05) pd[i] = td[i] + (td[i] < 0.5 ? 0.1 : -0.1);
        LossConfig lc;
        out.push_back(check_gradients("l1_loss", {pred}, [&] { return l1_loss(pred, target); }, opt));
        out.push_back(check_gradients("ssim_metric", {pred}, [&] { return ssim_metric(pred, target, lc); }, opt));
        out.push_back(check_gradients("combined_loss", {pred}, [&] { return combined_loss(pred, target, lc); }, opt));
    }

    {
        auto x = random_tensor(s, rng);
        auto p = gradcheck_detail::random_cab(4, 2, rng);
        auto probe = probe_for(s);
        out.push_back(check_gradients("channel_attention", join(std::vector{x}, leaves_of(p)),
                                      [&] { return probe_loss(channel_attention_forward(x, p), probe); }, opt));
    }
    for (std::size_t d : {1u, 2u}) {
        auto x = random_tensor(s, rng);
        auto p = gradcheck_detail::random_non_local(4, d, rng);
        auto probe = probe_for(s);
        out.push_back(check_gradients("non_local_d" + std::to_string(d), join(std::vector{x}, leaves_of(p)),
                                      [&] { return probe_loss(non_local_forward(x, p), probe); }, opt));
    }
    {
        auto x = random_tensor(s, rng);
        MabParams<double> p{gradcheck_detail::random_non_local(4, 2, rng), gradcheck_detail::random_cab(8, 4, rng),
                            random_tensor({4, 8, 1, 1}, rng), random_tensor({1, 4, 1, 1}, rng)};
        auto probe = probe_for(s);
        out.push_back(check_gradients(
            "mixed_attention",
            join(std::vector{x}, leaves_of(p.nonlocal), leaves_of(p.cab), std::vector{p.fuse_weight, p.fuse_bias}),
            [&] { return probe_loss(mixed_attention_forward(x, p), probe); }, opt));
    }
    {
        auto x = random_tensor(s, rng);
        IslParams<double> p{random_tensor({8, 16, 1, 1}, rng), random_tensor({1, 8, 1, 1}, rng)};
        auto probe = probe_for({3, 8, 3, 3});
        out.push_back(check_gradients("inverted_shuffle", {x, p.proj_weight, p.proj_bias},
                                      [&] { return probe_loss(inverted_shuffle_forward(x, p), probe); }, opt));
    }
    if (include_network) {
        ModelConfig cfg; // desk scale: base width 8, depth 3, all blocks
        out.push_back(check_network(cfg, opt, "network_full"));
    }
    return out;
}

} // namespace alen
