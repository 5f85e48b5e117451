#pragma once

// The enhancement network: a U-net over the 16-channel multi-ratio raw input,
// with optional channel attention / mixed attention after each encoder level,
// inverted shuffle (or max-pool) downsampling, transposed-conv upsampling with
// skip connections, and a 12-channel pixel-shuffle head producing full-resolution RGB.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "alen/blocks.hpp"
#include "alen/raw.hpp"

namespace alen {

struct ModelConfig {
    std::size_t base_width = 8;
    std::size_t depth = 3;
    std::array<double, 4> ratios{0.5, 0.8, 1.0, 1.2};
    bool enable_cab = true;
    bool enable_mab = true;
    bool enable_isl = true;
    std::size_t nonlocal_downsample = 2;
    std::size_t cab_reduction = 4;
    std::uint64_t seed = 0;

    std::size_t width_at(std::size_t level) const { return base_width << (level - 1); }

    /// Packed (half-resolution) input dims must be a multiple of this.
    std::size_t input_multiple() const {
        std::size_t m = std::size_t{1} << (depth - 1);
        return enable_mab ? m * nonlocal_downsample : m;
    }

    void validate() const {
        if (depth < 1 || depth > 8) throw ConfigError("depth must be in [1, 8]");
        if (base_width < 2 || base_width % 2 != 0) throw ConfigError("base_width must be even and >= 2");
        if (enable_mab && !enable_cab) throw ConfigError("enable_mab requires enable_cab");
        for (double r : ratios)
            if (!(r > 0) || !std::isfinite(r)) throw ConfigError("amplification ratios must be positive");
        if (nonlocal_downsample < 1) throw ConfigError("nonlocal_downsample must be >= 1");
        if (cab_reduction < 1) throw ConfigError("cab_reduction must be >= 1");
        for (std::size_t k = 1; k <= depth; ++k) {
            std::size_t c = width_at(k);
            std::size_t gated = enable_mab ? 2 * c : c;
            if (enable_cab && gated % cab_reduction != 0)
                throw ConfigError("cab_reduction " + std::to_string(cab_reduction) + " does not divide " +
                                  std::to_string(gated) + " channels at level " + std::to_string(k));
        }
    }
};

/// Named parameter set, ordered by name.
template <std::floating_point T>
struct ModelWeights {
    std::map<std::string, Tensor<T>> params;

    const Tensor<T>& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw UsageError("missing parameter " + name);
        return it->second;
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const auto& [_, t] : params) total += t.numel();
        return total;
    }

    void zero_grad() const {
        for (const auto& [_, t] : params) t.zero_grad();
    }

    template <std::floating_point U>
    ModelWeights<U> cast(bool requires_grad = true) const {
        ModelWeights<U> out;
        for (const auto& [name, t] : params) out.params.emplace(name, t.template cast<U>(requires_grad));
        return out;
    }
};

namespace detail {

template <std::floating_point T>
class WeightBuilder {
public:
    explicit WeightBuilder(std::uint64_t seed) : rng_(seed) {}

    void add(const std::string& name, Shape shape, std::size_t fan_in) {
        if (weights_.params.count(name)) throw ConfigError("duplicate parameter " + name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> data(shape.numel());
        for (auto& v : data) v = static_cast<T>(dist(rng_));
        weights_.params.emplace(name, Tensor<T>::from_data(shape, std::move(data), true));
    }

    // Conv biases start at zero; random ones left more ReLU units dead on the
    // non-negative inputs and slowed fitting.
    void add_zero(const std::string& name, Shape shape) {
        if (weights_.params.count(name)) throw ConfigError("duplicate parameter " + name);
        weights_.params.emplace(name, Tensor<T>::from_data(shape, std::vector<T>(shape.numel(), T(0)), true));
    }

    void conv(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k, bool bias = true) {
        add(prefix + ".weight", {cout, cin, k, k}, cin * k * k);
        if (bias) add_zero(prefix + ".bias", {1, cout, 1, 1});
    }

    // The gate MLP sees one pooled vector, so a zero fc1 bias can leave every
    // hidden unit dead; its biases stay random.
    void dense(const std::string& prefix, std::size_t cin, std::size_t cout) {
        add(prefix + ".weight", {cout, cin, 1, 1}, cin);
        add(prefix + ".bias", {1, cout, 1, 1}, cin);
    }

    void conv_transpose(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k) {
        add(prefix + ".weight", {cin, cout, k, k}, cout * k * k);
        add_zero(prefix + ".bias", {1, cout, 1, 1});
    }

    void cab(const std::string& prefix, std::size_t channels, std::size_t reduction) {
        dense(prefix + ".fc1", channels, channels / reduction);
        dense(prefix + ".fc2", channels / reduction, channels);
    }

    void non_local(const std::string& prefix, std::size_t channels) {
        const std::size_t inner = channels / 2;
        conv(prefix + ".theta", channels, inner, 1, false);
        conv(prefix + ".phi", channels, inner, 1, false);
        conv(prefix + ".g", channels, inner, 1, false);
        conv(prefix + ".out", inner, channels, 1, false);
    }

    ModelWeights<T> finish() { return std::move(weights_); }

private:
    std::mt19937_64 rng_;
    ModelWeights<T> weights_;
};

} // namespace detail

/// Parameter views for the blocks, keyed by name prefix.
template <std::floating_point T>
CabParams<T> cab_params(const ModelWeights<T>& w, const std::string& prefix, std::size_t reduction) {
    return {w.at(prefix + ".fc1.weight"), w.at(prefix + ".fc1.bias"), w.at(prefix + ".fc2.weight"),
            w.at(prefix + ".fc2.bias"), reduction};
}

template <std::floating_point T>
NonLocalParams<T> non_local_params(const ModelWeights<T>& w, const std::string& prefix, std::size_t downsample) {
    return {w.at(prefix + ".theta.weight"), w.at(prefix + ".phi.weight"), w.at(prefix + ".g.weight"),
            w.at(prefix + ".out.weight"), downsample};
}

template <std::floating_point T>
MabParams<T> mab_params(const ModelWeights<T>& w, const std::string& prefix, const ModelConfig& cfg) {
    return {non_local_params(w, prefix + ".nl", cfg.nonlocal_downsample),
            cab_params(w, prefix + ".cab", cfg.cab_reduction), w.at(prefix + ".fuse.weight"),
            w.at(prefix + ".fuse.bias")};
}

inline std::string level_name(const char* part, std::size_t k) { return std::string(part) + ".l" + std::to_string(k); }

/// Encoder level k: two 3x3 convs, then MAB or CAB. Levels are joined by ISL
/// (4C -> 2C after unshuffle) or 2x2 max-pool. Decoder level k: 2x2 stride-2
/// transposed conv halving channels, concat with encoder skip k, two 3x3 convs.
/// Head: 1x1 conv to 12 channels followed by pixel shuffle (r = 2).
template <std::floating_point T = float>
ModelWeights<T> build(const ModelConfig& cfg) {
    cfg.validate();
    detail::WeightBuilder<T> b(cfg.seed);
    std::size_t in_ch = 16;
    for (std::size_t k = 1; k <= cfg.depth; ++k) {
        const std::size_t c = cfg.width_at(k);
        const std::string p = level_name("enc", k);
        b.conv(p + ".conv1", in_ch, c, 3);
        b.conv(p + ".conv2", c, c, 3);
        if (cfg.enable_mab) {
            b.non_local(p + ".mab.nl", c);
            b.cab(p + ".mab.cab", 2 * c, cfg.cab_reduction);
            b.conv(p + ".mab.fuse", 2 * c, c, 1);
        } else if (cfg.enable_cab) {
            b.cab(p + ".cab", c, cfg.cab_reduction);
        }
        if (k < cfg.depth && cfg.enable_isl) {
            b.conv(level_name("down", k) + ".proj", 4 * c, 2 * c, 1);
            in_ch = 2 * c;
        } else {
            in_ch = c;
        }
    }
    for (std::size_t k = cfg.depth - 1; k >= 1; --k) {
        const std::size_t c = cfg.width_at(k);
        const std::string p = level_name("dec", k);
        b.conv_transpose(p + ".up", 2 * c, c, 2);
        b.conv(p + ".conv1", 2 * c, c, 3);
        b.conv(p + ".conv2", c, c, 3);
    }
    b.conv("head", cfg.width_at(1), 12, 1);
    return b.finish();
}

/// Packs the raw frame and stacks four copies scaled by w * ratios[k], each
/// clipped to [0, 1] unless `clip` is false. Output: (1, 16, H/2, W/2), ratio-major.
template <std::floating_point T = float>
Tensor<T> preprocess_raw(const RawFrame& raw, double w, const ModelConfig& cfg, bool clip = true) {
    if (!(w > 0) || !std::isfinite(w)) throw InputError("amplification ratio must be positive, got " + std::to_string(w));
    auto packed = pack_bayer<T>(raw);
    const Shape s = packed.shape();
    std::vector<T> out(16 * s.plane());
    auto d = packed.data();
    for (std::size_t k = 0; k < 4; ++k) {
        const T gain = static_cast<T>(w * cfg.ratios[k]);
        for (std::size_t i = 0; i < d.size(); ++i) {
            T v = d[i] * gain;
            out[k * d.size() + i] = clip ? std::clamp(v, T(0), T(1)) : v;
        }
    }
    return Tensor<T>::from_data({1, 16, s.h, s.w}, std::move(out));
}

/// Runs the network. With `clamp_output` the RGB result is clamped to [0,1]
/// (gradient zero outside).
template <std::floating_point T>
Tensor<T> forward(const ModelWeights<T>& w, const ModelConfig& cfg, const Tensor<T>& input, bool clamp_output = true) {
    const Shape s = input.shape();
    if (s.c != 16) throw DimensionError("network input must have 16 channels, got " + s.str());
    const std::size_t multiple = cfg.input_multiple();
    if (s.h % multiple != 0 || s.w % multiple != 0)
        throw DimensionError("packed input dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                             " must be multiples of " + std::to_string(multiple) + " (raw dims multiples of " +
                             std::to_string(2 * multiple) + ")");
    using namespace ops;
    std::vector<Tensor<T>> skips;
    Tensor<T> x = input;
    for (std::size_t k = 1; k <= cfg.depth; ++k) {
        if (k > 1) {
            if (cfg.enable_isl) {
                const std::string p = level_name("down", k - 1) + ".proj";
                x = inverted_shuffle_forward(x, IslParams<T>{w.at(p + ".weight"), w.at(p + ".bias")});
            } else {
                x = max_pool2(x);
            }
        }
        const std::string p = level_name("enc", k);
        x = relu(conv2d(x, w.at(p + ".conv1.weight"), w.at(p + ".conv1.bias"), 1, 1));
        x = relu(conv2d(x, w.at(p + ".conv2.weight"), w.at(p + ".conv2.bias"), 1, 1));
        if (cfg.enable_mab)
            x = mixed_attention_forward(x, mab_params(w, p + ".mab", cfg));
        else if (cfg.enable_cab)
            x = channel_attention_forward(x, cab_params(w, p + ".cab", cfg.cab_reduction));
        skips.push_back(x);
    }
    for (std::size_t k = cfg.depth - 1; k >= 1; --k) {
        const std::string p = level_name("dec", k);
        x = conv_transpose2d(x, w.at(p + ".up.weight"), w.at(p + ".up.bias"), 2);
        x = concat_channels<T>({x, skips[k - 1]});
        x = relu(conv2d(x, w.at(p + ".conv1.weight"), w.at(p + ".conv1.bias"), 1, 1));
        x = relu(conv2d(x, w.at(p + ".conv2.weight"), w.at(p + ".conv2.bias"), 1, 1));
    }
    x = pixel_shuffle(conv2d(x, w.at("head.weight"), w.at("head.bias")), 2);
    return clamp_output ? clamp(x, T(0), T(1)) : x;
}

} // namespace alen
