#pragma once

// Plain-text key = value configuration shared by the model and the trainer.
// '#' starts a comment; blank lines are ignored; unknown keys are rejected.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alen/model.hpp"

namespace alen {

struct TrainConfig {
    double lr0 = 1e-4;
    std::vector<std::pair<std::size_t, double>> schedule{{100, 2e-5}, {150, 1e-5}};
    std::size_t epochs = 200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 1;
    std::size_t crop = 64;
    bool augment = true;
    std::size_t checkpoint_every = 0;
    double alpha = 0.85;
    std::uint64_t seed = 0;

    /// The full-length schedule: 4000 epochs, 1e-4 dropping to 2e-5 at 2000 and 1e-5 at 3000.
    static TrainConfig full_schedule() {
        TrainConfig c;
        c.epochs = 4000;
        c.schedule = {{2000, 2e-5}, {3000, 1e-5}};
        c.crop = 512;
        return c;
    }

    /// Keeps the 50% / 75% breakpoints for a shorter run.
    void scale_schedule_to(std::size_t total_epochs) {
        epochs = total_epochs;
        schedule = {{total_epochs / 2, 2e-5}, {total_epochs * 3 / 4, 1e-5}};
    }

    void validate() const {
        if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
        double prev_lr = lr0;
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (i > 0 && schedule[i].first <= schedule[i - 1].first)
                throw ConfigError("schedule thresholds must be strictly increasing");
            if (!(schedule[i].second > 0) || schedule[i].second > prev_lr)
                throw ConfigError("schedule learning rates must be positive and non-increasing");
            prev_lr = schedule[i].second;
        }
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0,1)");
        if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (crop == 0 || crop % 2 != 0) throw ConfigError("crop must be even and positive");
        if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha must lie in [0,1]");
    }
};

/// Piecewise-constant learning rate; a threshold N takes effect from epoch N onward.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    double lr = cfg.lr0;
    for (const auto& [threshold, value] : cfg.schedule)
        if (epoch >= threshold) lr = value;
    return lr;
}

namespace config_detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Shortest representation that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

} // namespace config_detail

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

/// Applies one key to the run config. Keys are the field names of ModelConfig and
/// TrainConfig; `seed` feeds both weight init and training randomness.
inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
    using namespace config_detail;
    ModelConfig& m = rc.model;
    TrainConfig& t = rc.train;
    if (key == "base_width") m.base_width = to_uint(key, value);
    else if (key == "depth") m.depth = to_uint(key, value);
    else if (key == "ratios") {
        auto parts = split(value, ',');
        if (parts.size() != 4) throw ConfigError("ratios must have exactly 4 entries");
        for (std::size_t i = 0; i < 4; ++i) m.ratios[i] = to_double(key, parts[i]);
    } else if (key == "enable_cab") m.enable_cab = to_bool(key, value);
    else if (key == "enable_mab") m.enable_mab = to_bool(key, value);
    else if (key == "enable_isl") m.enable_isl = to_bool(key, value);
    else if (key == "nonlocal_downsample") m.nonlocal_downsample = to_uint(key, value);
    else if (key == "cab_reduction") m.cab_reduction = to_uint(key, value);
    else if (key == "seed") m.seed = t.seed = to_uint(key, value);
    else if (key == "lr0") t.lr0 = to_double(key, value);
    else if (key == "schedule") {
        t.schedule.clear();
        if (!value.empty() && value != "none")
            for (const auto& item : split(value, ',')) {
                auto colon = item.find(':');
                if (colon == std::string::npos) throw ConfigError("schedule entries must be epoch:lr");
                t.schedule.emplace_back(to_uint(key, trim(item.substr(0, colon))),
                                        to_double(key, trim(item.substr(colon + 1))));
            }
    } else if (key == "epochs") t.epochs = to_uint(key, value);
    else if (key == "beta1") t.beta1 = to_double(key, value);
    else if (key == "beta2") t.beta2 = to_double(key, value);
    else if (key == "epsilon") t.epsilon = to_double(key, value);
    else if (key == "batch_size") t.batch_size = to_uint(key, value);
    else if (key == "crop") t.crop = to_uint(key, value);
    else if (key == "augment") t.augment = to_bool(key, value);
    else if (key == "checkpoint_every") t.checkpoint_every = to_uint(key, value);
    else if (key == "alpha") t.alpha = to_double(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::string& text, RunConfig rc = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        apply_config_key(rc, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
    }
    rc.model.validate();
    rc.train.validate();
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text form; parse_config(format_config(rc)) reproduces rc exactly.
inline std::string format_config(const RunConfig& rc) {
    using config_detail::fmt_double;
    const ModelConfig& m = rc.model;
    const TrainConfig& t = rc.train;
    auto b = [](bool v) { return v ? "true" : "false"; };
    std::ostringstream o;
    o << "base_width = " << m.base_width << "\n";
    o << "depth = " << m.depth << "\n";
    o << "ratios = " << fmt_double(m.ratios[0]) << "," << fmt_double(m.ratios[1]) << "," << fmt_double(m.ratios[2])
      << "," << fmt_double(m.ratios[3]) << "\n";
    o << "enable_cab = " << b(m.enable_cab) << "\n";
    o << "enable_mab = " << b(m.enable_mab) << "\n";
    o << "enable_isl = " << b(m.enable_isl) << "\n";
    o << "nonlocal_downsample = " << m.nonlocal_downsample << "\n";
    o << "cab_reduction = " << m.cab_reduction << "\n";
    o << "seed = " << m.seed << "\n";
    o << "lr0 = " << fmt_double(t.lr0) << "\n";
    o << "schedule = ";
    if (t.schedule.empty()) o << "none";
    for (std::size_t i = 0; i < t.schedule.size(); ++i)
        o << (i ? "," : "") << t.schedule[i].first << ":" << fmt_double(t.schedule[i].second);
    o << "\n";
    o << "epochs = " << t.epochs << "\n";
    o << "beta1 = " << fmt_double(t.beta1) << "\n";
    o << "beta2 = " << fmt_double(t.beta2) << "\n";
    o << "epsilon = " << fmt_double(t.epsilon) << "\n";
    o << "batch_size = " << t.batch_size << "\n";
    o << "crop = " << t.crop << "\n";
    o << "augment = " << b(t.augment) << "\n";
    o << "checkpoint_every = " << t.checkpoint_every << "\n";
    o << "alpha = " << fmt_double(t.alpha) << "\n";
    return o.str();
}

/// Cumulative ablation toggle sets: backbone, +CAB, +CAB+MAB, +CAB+MAB+ISL.
inline void apply_ablation(ModelConfig& m, const std::string& name) {
    if (name == "backbone") {
        m.enable_cab = m.enable_mab = m.enable_isl = false;
    } else if (name == "cab") {
        m.enable_cab = true;
        m.enable_mab = m.enable_isl = false;
    } else if (name == "mab") {
        m.enable_cab = m.enable_mab = true;
        m.enable_isl = false;
    } else if (name == "full") {
        m.enable_cab = m.enable_mab = m.enable_isl = true;
    } else {
        throw ConfigError("unknown ablation '" + name + "' (expected backbone|cab|mab|full)");
    }
}

} // namespace alen
