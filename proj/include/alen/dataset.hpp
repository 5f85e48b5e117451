#pragma once

// On-disk datasets: a directory holding dataset.csv (scene,raw,target,ratio)
// with raw containers and 16-bit PPM references next to it.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "alen/raw.hpp"

namespace alen {

inline constexpr const char* kManifestName = "dataset.csv";
inline constexpr const char* kManifestHeader = "scene,raw,target,ratio";

inline std::vector<Pair> load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest = dir / kManifestName;
    if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
    std::ifstream in(manifest);
    if (!in) throw FormatError("dataset manifest not found: " + manifest.string());
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw FormatError(manifest.string() + ": expected header '" + kManifestHeader + "'");
    std::vector<Pair> pairs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 4) throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        Pair p;
        p.scene = cols[0];
        p.input = load_raw(dir / cols[1]);
        p.target = load_rgb(dir / cols[2]);
        try {
            p.ratio = std::stod(cols[3]);
        } catch (const std::logic_error&) {
            throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": bad ratio");
        }
        if (!(p.ratio > 0)) throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": ratio must be positive");
        const Shape ts = p.target.shape();
        if (ts.h != p.input.height || ts.w != p.input.width)
            throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": raw and target dims differ");
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw FormatError(manifest.string() + ": no pairs");
    return pairs;
}

/// Writes `<scene>.alrw`, `<scene>.ppm` per pair and the manifest.
inline void save_dataset(const std::filesystem::path& dir, const std::vector<Pair>& pairs) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << kManifestHeader << "\n";
    for (const auto& p : pairs) {
        const std::string raw_name = p.scene + ".alrw";
        const std::string rgb_name = p.scene + ".ppm";
        save_raw(dir / raw_name, p.input);
        save_rgb(dir / rgb_name, p.target);
        std::ostringstream ratio;
        ratio.precision(17);
        ratio << p.ratio;
        manifest << p.scene << "," << raw_name << "," << rgb_name << "," << ratio.str() << "\n";
    }
    io::write_file(dir / kManifestName, manifest.str());
}

/// Quantizes a target to 16 bits so in-memory pairs match what a saved dataset reloads.
inline Tensor<float> quantize16(const Tensor<float>& rgb) { return decode_ppm16(encode_ppm16(rgb)); }

struct SynthOptions {
    std::size_t count = 20;
    std::size_t size = 64;
    std::vector<double> ratios{100.0, 250.0, 300.0};
    NoiseModel noise{1e-5, 1e-7, 0};
    BayerPattern pattern = BayerPattern::RGGB;
    std::uint64_t seed = 0;
};

/// Synthetic pairs from procedural scenes (or the given RGB sources, cycled),
/// ratios assigned round-robin.
inline std::vector<Pair> synth_dataset(const SynthOptions& opt, const std::vector<Tensor<float>>& sources = {}) {
    if (opt.ratios.empty()) throw InputError("synth: no ratios");
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < opt.count; ++i) {
        Tensor<float> target = sources.empty() ? generate_scene(opt.size, opt.size, opt.seed * 1000003u + i)
                                               : sources[i % sources.size()];
        target = quantize16(target);
        NoiseModel nm = opt.noise;
        nm.seed = opt.seed * 7919u + i + 1;
        Pair p = synth_lowlight(target, opt.ratios[i % opt.ratios.size()], nm, opt.pattern);
        std::ostringstream name;
        name << "scene_" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
        p.scene = name.str();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

} // namespace alen
