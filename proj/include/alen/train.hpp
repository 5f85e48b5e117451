#pragma once

// Adam, checkpointing, the training loop and the per-ratio evaluator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "alen/config.hpp"
#include "alen/loss.hpp"
#include "alen/model.hpp"
#include "alen/raw.hpp"

namespace alen {

template <std::floating_point T>
struct AdamState {
    std::map<std::string, std::vector<T>> m;
    std::map<std::string, std::vector<T>> v;
    std::size_t step = 0;
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected Adam update over every parameter, in name order.
/// Throws UsageError if any parameter has no gradient.
template <std::floating_point T>
void adam_step(const ModelWeights<T>& weights, AdamState<T>& state, double lr, const AdamHyper& hp = {}) {
    for (const auto& [name, p] : weights.params)
        if (!p.has_grad()) throw UsageError("adam_step: missing gradient for " + name);
    const std::size_t t = ++state.step;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    for (const auto& [name, p] : weights.params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.numel(), T(0));
        if (v.empty()) v.assign(p.numel(), T(0));
        auto data = p.mutable_data();
        auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + hp.epsilon);
            data[i] = static_cast<T>(data[i] - update);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    RunConfig config;
    ModelWeights<float> weights;
    AdamState<float> adam;
    std::uint64_t epoch = 0;
    std::string rng_state;
};

namespace ckpt_detail {

inline void put_tensor(std::string& out, const std::string& name, const Shape& s, std::span<const float> data) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    for (auto d : s.dims()) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : data) io::put_f32(out, v);
}

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline NamedTensor get_tensor(io::Reader& r) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    t.shape.n = r.u32();
    t.shape.c = r.u32();
    t.shape.h = r.u32();
    t.shape.w = r.u32();
    r.need(t.shape.numel() * 4);
    t.data.resize(t.shape.numel());
    for (auto& v : t.data) v = r.f32();
    return t;
}

inline void put_u64(std::string& out, std::uint64_t v) {
    io::put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
    io::put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

} // namespace ckpt_detail

/// "ALCK", u32 version, length-prefixed config text, u64 epoch, u64 adam step,
/// length-prefixed RNG state, then three tensor sections (weights, first moments,
/// second moments), each a u32 count of (name, 4 x u32 shape, f32 payload).
inline std::string encode_checkpoint(const Checkpoint& ck) {
    using namespace ckpt_detail;
    std::string out = "ALCK";
    io::put_u32(out, 1);
    const std::string cfg = format_config(ck.config);
    io::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    put_u64(out, ck.epoch);
    put_u64(out, ck.adam.step);
    io::put_u32(out, static_cast<std::uint32_t>(ck.rng_state.size()));
    out += ck.rng_state;
    io::put_u32(out, static_cast<std::uint32_t>(ck.weights.params.size()));
    for (const auto& [name, t] : ck.weights.params) put_tensor(out, name, t.shape(), t.data());
    for (const auto* moments : {&ck.adam.m, &ck.adam.v}) {
        io::put_u32(out, static_cast<std::uint32_t>(moments->size()));
        for (const auto& [name, vec] : *moments) {
            const Shape s = ck.weights.at(name).shape();
            put_tensor(out, name, s, vec);
        }
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string bytes, const std::string& what = "checkpoint") {
    using namespace ckpt_detail;
    io::Reader r(std::move(bytes), what);
    if (r.bytes(4) != "ALCK") throw FormatError(what + ": bad magic");
    if (auto v = r.u32(); v != 1) throw FormatError(what + ": unsupported version " + std::to_string(v));
    Checkpoint ck;
    try {
        ck.config = parse_config(r.bytes(r.u32()));
    } catch (const ConfigError& e) {
        throw FormatError(what + ": " + e.what());
    }
    ck.epoch = r.u64();
    ck.adam.step = r.u64();
    ck.rng_state = r.bytes(r.u32());

    const auto expected = build<float>(ck.config.model);
    const std::uint32_t count = r.u32();
    if (count != expected.params.size())
        throw FormatError(what + ": " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(expected.params.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        auto t = get_tensor(r);
        auto it = expected.params.find(t.name);
        if (it == expected.params.end() || it->second.shape() != t.shape)
            throw FormatError(what + ": unexpected tensor " + t.name + " " + t.shape.str());
        ck.weights.params.emplace(t.name, Tensor<float>::from_data(t.shape, std::move(t.data), true));
    }
    for (auto* moments : {&ck.adam.m, &ck.adam.v}) {
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            auto t = get_tensor(r);
            auto it = ck.weights.params.find(t.name);
            if (it == ck.weights.params.end() || it->second.shape() != t.shape)
                throw FormatError(what + ": moment for unknown tensor " + t.name);
            (*moments)[t.name] = std::move(t.data);
        }
    }
    if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    io::write_file(path, encode_checkpoint(ck));
}
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0;
    double lr = 0;
};

inline std::string format_history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream o;
    o << "epoch,mean_loss,lr\n";
    for (const auto& r : history)
        o << r.epoch << "," << config_detail::fmt_double(r.mean_loss) << "," << config_detail::fmt_double(r.lr) << "\n";
    return o.str();
}

/// Owns the weights and optimizer state for one run. Everything random is drawn
/// from a single generator seeded by the config and persisted in checkpoints.
class Trainer {
public:
    explicit Trainer(const RunConfig& cfg) : config_(cfg), weights_(build<float>(cfg.model)), rng_(cfg.train.seed) {
        config_.train.validate();
    }

    explicit Trainer(const Checkpoint& ck)
        : config_(ck.config), weights_(ck.weights.cast<float>(true)), adam_(ck.adam), epoch_(ck.epoch) {
        std::istringstream in(ck.rng_state);
        in >> rng_;
        if (!in) throw FormatError("checkpoint: malformed RNG state");
    }

    const RunConfig& config() const { return config_; }
    const ModelWeights<float>& weights() const { return weights_; }
    std::size_t epoch() const { return epoch_; }

    /// One pass over the dataset in a seeded random order. Returns the mean loss.
    EpochRecord run_epoch(const std::vector<Pair>& dataset) {
        if (dataset.empty()) throw InputError("train: empty dataset");
        const TrainConfig& tc = config_.train;
        const double lr = lr_at(epoch_, tc);
        const AdamHyper hp{tc.beta1, tc.beta2, tc.epsilon};
        LossConfig lc;
        lc.alpha = tc.alpha;

        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng_);

        double total = 0;
        std::size_t in_batch = 0;
        weights_.zero_grad();
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Pair& src = dataset[order[i]];
            const std::uint64_t aug_seed = rng_();
            const Pair sample = tc.augment ? augment(src, tc.crop, aug_seed) : src;
            auto input = preprocess_raw<float>(sample.input, sample.ratio, config_.model);
            // The loss sees the unclamped output; the clamp's zero gradient would
            // otherwise freeze output channels that start below zero.
            auto pred = forward(weights_, config_.model, input, false);
            auto loss = combined_loss(pred, sample.target, lc);
            const double value = loss.item();
            if (!std::isfinite(value)) throw NonFiniteLoss(samples_seen_, value);
            total += value;
            ops::scale(loss, 1.0f / static_cast<float>(tc.batch_size)).backward();
            ++samples_seen_;
            if (++in_batch == tc.batch_size || i + 1 == order.size()) {
                adam_step(weights_, adam_, lr, hp);
                weights_.zero_grad();
                in_batch = 0;
            }
        }
        EpochRecord rec{epoch_, total / static_cast<double>(dataset.size()), lr};
        ++epoch_;
        return rec;
    }

    /// Trains until `epochs` total epochs have run; `on_epoch` is called after each.
    std::vector<EpochRecord> run(const std::vector<Pair>& dataset, std::size_t epochs,
                                 const std::function<void(const EpochRecord&, const Trainer&)>& on_epoch = {}) {
        std::vector<EpochRecord> history;
        while (epoch_ < epochs) {
            history.push_back(run_epoch(dataset));
            if (on_epoch) on_epoch(history.back(), *this);
        }
        return history;
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = config_;
        ck.weights = weights_.cast<float>(true);
        ck.adam = adam_;
        ck.epoch = epoch_;
        std::ostringstream out;
        out << rng_;
        ck.rng_state = out.str();
        return ck;
    }

private:
    RunConfig config_;
    ModelWeights<float> weights_;
    AdamState<float> adam_;
    std::mt19937_64 rng_;
    std::size_t epoch_ = 0;
    std::size_t samples_seen_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct PairMetrics {
    std::string scene;
    double ratio = 0;
    double psnr_db = 0;
    double ssim = 0;
};

struct GroupMetrics {
    std::string label;
    std::size_t count = 0;
    double psnr_db = 0;
    double ssim = 0;
};

struct MetricsReport {
    std::vector<PairMetrics> pairs;
    std::vector<GroupMetrics> groups; // ratio buckets in ascending order, then "all"
};

/// Ratios within 5% of 100, 250 or 300 fall into those buckets; anything else
/// is grouped by its exact value.
inline std::string ratio_bucket(double ratio) {
    for (double b : {100.0, 250.0, 300.0})
        if (std::abs(ratio - b) <= 0.05 * b) return "x" + config_detail::fmt_double(b);
    return "x" + config_detail::fmt_double(ratio);
}

inline double bucket_key(double ratio) {
    for (double b : {100.0, 250.0, 300.0})
        if (std::abs(ratio - b) <= 0.05 * b) return b;
    return ratio;
}

/// Aggregates in fixed pair order; "all" is the unweighted mean over pairs.
inline MetricsReport summarize(std::vector<PairMetrics> pairs) {
    if (pairs.empty()) throw InputError("evaluate: empty dataset");
    MetricsReport rep;
    std::map<double, GroupMetrics> buckets;
    GroupMetrics all{"all", 0, 0, 0};
    for (const auto& p : pairs) {
        auto& g = buckets[bucket_key(p.ratio)];
        g.label = ratio_bucket(p.ratio);
        ++g.count;
        g.psnr_db += p.psnr_db;
        g.ssim += p.ssim;
        ++all.count;
        all.psnr_db += p.psnr_db;
        all.ssim += p.ssim;
    }
    for (auto& [_, g] : buckets) {
        g.psnr_db /= static_cast<double>(g.count);
        g.ssim /= static_cast<double>(g.count);
        rep.groups.push_back(g);
    }
    all.psnr_db /= static_cast<double>(all.count);
    all.ssim /= static_cast<double>(all.count);
    rep.groups.push_back(all);
    rep.pairs = std::move(pairs);
    return rep;
}

inline PairMetrics score_pair(const std::string& scene, double ratio, const Tensor<float>& pred,
                              const Tensor<float>& target) {
    return {scene, ratio, psnr(pred, target), ssim_value(pred, target)};
}

/// Full-image inference for one raw frame.
inline Tensor<float> enhance(const ModelWeights<float>& weights, const ModelConfig& cfg, const RawFrame& raw,
                             double ratio) {
    auto input = preprocess_raw<float>(raw, ratio, cfg).detach();
    return forward(weights, cfg, input).detach();
}

inline MetricsReport evaluate(const ModelWeights<float>& weights, const ModelConfig& cfg,
                              const std::vector<Pair>& dataset) {
    if (dataset.empty()) throw InputError("evaluate: empty dataset");
    // Inference does not need gradients.
    const auto frozen = weights.cast<float>(false);
    std::vector<PairMetrics> rows;
    for (const auto& pair : dataset)
        rows.push_back(score_pair(pair.scene, pair.ratio, enhance(frozen, cfg, pair.input, pair.ratio), pair.target));
    return summarize(std::move(rows));
}

inline MetricsReport evaluate(const Checkpoint& ck, const std::vector<Pair>& dataset) {
    return evaluate(ck.weights, ck.config.model, dataset);
}

namespace report_detail {

inline std::string number(double v, int precision) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(precision);
    o << v;
    return o.str();
}

} // namespace report_detail

/// Per-pair CSV: scene,ratio,psnr_db,ssim
inline std::string format_metrics_csv(const MetricsReport& rep) {
    std::ostringstream o;
    o << "scene,ratio,psnr_db,ssim\n";
    for (const auto& p : rep.pairs)
        o << p.scene << "," << config_detail::fmt_double(p.ratio) << "," << report_detail::number(p.psnr_db, 4) << ","
          << report_detail::number(p.ssim, 6) << "\n";
    return o.str();
}

/// Grouped table with one row per ratio bucket and a final "all" row.
inline std::string format_metrics_table(const MetricsReport& rep) {
    std::ostringstream o;
    o << "group,count,psnr,ssim\n";
    for (const auto& g : rep.groups)
        o << g.label << "," << g.count << "," << report_detail::number(g.psnr_db, 4) << ","
          << report_detail::number(g.ssim, 6) << "\n";
    return o.str();
}

} // namespace alen
