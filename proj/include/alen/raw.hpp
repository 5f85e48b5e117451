#pragma once

// Bayer raw frames: packing into half-resolution planes, synthetic low-light
// pair generation, phase-preserving augmentation and file I/O.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "alen/tensor.hpp"

namespace alen {

enum class BayerPattern : std::uint16_t { RGGB = 0, BGGR = 1, GRBG = 2, GBRG = 3 };

inline std::string to_string(BayerPattern p) {
    switch (p) {
    case BayerPattern::RGGB: return "RGGB";
    case BayerPattern::BGGR: return "BGGR";
    case BayerPattern::GRBG: return "GRBG";
    case BayerPattern::GBRG: return "GBRG";
    }
    return "unknown";
}

inline BayerPattern parse_pattern(const std::string& s) {
    for (auto p : {BayerPattern::RGGB, BayerPattern::BGGR, BayerPattern::GRBG, BayerPattern::GBRG})
        if (to_string(p) == s) return p;
    throw InputError("unknown Bayer pattern '" + s + "'");
}

inline BayerPattern pattern_from_code(std::uint32_t code) {
    if (code > 3) throw FormatError("unknown Bayer pattern code " + std::to_string(code));
    return static_cast<BayerPattern>(code);
}

/// Colors of one 2x2 cell, row-major: 0 = R, 1 = G, 2 = B.
using CellColors = std::array<int, 4>;

inline CellColors cell_colors(BayerPattern p) {
    switch (p) {
    case BayerPattern::RGGB: return {0, 1, 1, 2};
    case BayerPattern::BGGR: return {2, 1, 1, 0};
    case BayerPattern::GRBG: return {1, 0, 2, 1};
    case BayerPattern::GBRG: return {1, 2, 0, 1};
    }
    throw InputError("unknown Bayer pattern");
}

inline BayerPattern pattern_from_cell(const CellColors& cell) {
    for (auto p : {BayerPattern::RGGB, BayerPattern::BGGR, BayerPattern::GRBG, BayerPattern::GBRG})
        if (cell_colors(p) == cell) return p;
    throw InputError("2x2 cell is not a Bayer pattern");
}

/// Offsets within the 2x2 cell (dy*2 + dx) of the packed channels R, G1, G2, B.
/// G1 shares a row with R, G2 shares a row with B.
inline std::array<std::size_t, 4> packed_sites(BayerPattern p) {
    auto cell = cell_colors(p);
    std::size_t r = 0, b = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (cell[i] == 0) r = i;
        if (cell[i] == 2) b = i;
    }
    std::size_t g1 = (r / 2) * 2 + (1 - r % 2);
    std::size_t g2 = (b / 2) * 2 + (1 - b % 2);
    return {r, g1, g2, b};
}

struct RawFrame {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> mosaic; // sensor counts, row-major
    BayerPattern pattern = BayerPattern::RGGB;
    float black_level = 512.0f;
    float white_level = 16383.0f;
    float exposure_s = 0.1f;
    std::uint32_t iso = 100;

    float at(std::size_t y, std::size_t x) const { return mosaic[y * width + x]; }

    void validate() const {
        if (height == 0 || width == 0 || height % 2 != 0 || width % 2 != 0)
            throw DimensionError("raw frame dims must be even and positive, got " + std::to_string(height) + "x" +
                                 std::to_string(width));
        if (mosaic.size() != height * width) throw DimensionError("raw frame mosaic size does not match dims");
        if (!(black_level < white_level)) throw InputError("raw frame black level must be below white level");
    }
};

struct NoiseModel {
    double shot_gain = 0.0;     // variance per unit normalized signal
    double read_variance = 0.0; // signal-independent variance
    std::uint64_t seed = 0;
};

/// Short-exposure raw input, its long-exposure linear RGB reference, and their exposure ratio.
struct Pair {
    std::string scene;
    RawFrame input;
    Tensor<float> target; // (1, 3, H, W)
    double ratio = 1.0;
};

/// Normalizes counts by the black/white levels (clamped below at 0) and packs each
/// 2x2 cell into channels (R, G1, G2, B) at half resolution.
template <std::floating_point T = float>
Tensor<T> pack_bayer(const RawFrame& raw) {
    raw.validate();
    const std::size_t h = raw.height / 2, w = raw.width / 2;
    const auto sites = packed_sites(raw.pattern);
    const double range = static_cast<double>(raw.white_level) - raw.black_level;
    std::vector<T> out(4 * h * w);
    for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t dy = sites[c] / 2, dx = sites[c] % 2;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double v = (raw.at(2 * y + dy, 2 * x + dx) - static_cast<double>(raw.black_level)) / range;
                out[(c * h + y) * w + x] = static_cast<T>(std::max(0.0, v));
            }
    }
    return Tensor<T>::from_data({1, 4, h, w}, std::move(out));
}

/// Inverse of the packing index map: returns the normalized mosaic (row-major).
template <std::floating_point T>
std::vector<T> unpack_bayer(const Tensor<T>& packed, BayerPattern pattern) {
    const Shape s = packed.shape();
    if (s.n != 1 || s.c != 4) throw DimensionError("unpack_bayer expects (1,4,h,w), got " + s.str());
    const auto sites = packed_sites(pattern);
    const std::size_t H = 2 * s.h, W = 2 * s.w;
    std::vector<T> mosaic(H * W);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < s.w; ++x)
                mosaic[(2 * y + sites[c] / 2) * W + 2 * x + sites[c] % 2] = packed.at(0, c, y, x);
    return mosaic;
}

/// Samples the RGB plane named by the Bayer pattern at each site.
inline std::vector<float> mosaic_rgb(const Tensor<float>& rgb, BayerPattern pattern) {
    const Shape s = rgb.shape();
    if (s.n != 1 || s.c != 3 || s.h % 2 != 0 || s.w % 2 != 0)
        throw DimensionError("mosaic_rgb expects (1,3,H,W) with even H,W, got " + s.str());
    const auto cell = cell_colors(pattern);
    std::vector<float> out(s.plane());
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            out[y * s.w + x] = rgb.at(0, static_cast<std::size_t>(cell[(y % 2) * 2 + x % 2]), y, x);
    return out;
}

/// Simulates a short exposure of `target_rgb` darker by `ratio`, with heteroscedastic
/// Gaussian noise of variance shot_gain * signal + read_variance in normalized units.
inline Pair synth_lowlight(const Tensor<float>& target_rgb, double ratio, const NoiseModel& noise,
                           BayerPattern pattern, float black_level = 512.0f, float white_level = 16383.0f) {
    if (!(ratio >= 1.0) || !std::isfinite(ratio)) throw InputError("synth_lowlight: ratio must be >= 1");
    if (noise.shot_gain < 0 || noise.read_variance < 0) throw InputError("synth_lowlight: negative noise parameter");
    for (float v : target_rgb.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw InputError("synth_lowlight: target values must lie in [0,1]");
    const Shape s = target_rgb.shape();
    auto planes = mosaic_rgb(target_rgb, pattern);

    Pair pair;
    pair.ratio = ratio;
    pair.target = target_rgb;
    RawFrame& raw = pair.input;
    raw.height = s.h;
    raw.width = s.w;
    raw.pattern = pattern;
    raw.black_level = black_level;
    raw.white_level = white_level;
    raw.exposure_s = static_cast<float>(10.0 / ratio);
    raw.mosaic.resize(planes.size());

    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const double range = static_cast<double>(white_level) - black_level;
    for (std::size_t i = 0; i < planes.size(); ++i) {
        double signal = planes[i] / ratio;
        double var = noise.shot_gain * signal + noise.read_variance;
        double v = signal;
        if (var > 0) v += std::sqrt(var) * unit(rng);
        double counts = black_level + v * range;
        raw.mosaic[i] = static_cast<float>(std::clamp(counts, 0.0, static_cast<double>(white_level)));
    }
    return pair;
}

// ---------------------------------------------------------------------------
// Augmentation

/// One geometric draw: an even-aligned crop, then optional transpose, then flips.
/// Any rotation by a multiple of 90 degrees is one of these compositions.
struct AugmentDraw {
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    std::size_t size_h = 0;
    std::size_t size_w = 0;
    bool transpose = false;
    bool flip_h = false;
    bool flip_v = false;
};

inline AugmentDraw draw_augment(std::size_t height, std::size_t width, std::size_t crop, std::mt19937_64& rng,
                                bool geometric = true) {
    if (crop == 0 || crop % 2 != 0) throw ConfigError("crop size must be even and positive");
    if (crop > height || crop > width)
        throw InputError("crop " + std::to_string(crop) + " larger than image " + std::to_string(height) + "x" +
                         std::to_string(width));
    AugmentDraw d;
    d.size_h = d.size_w = crop;
    std::uniform_int_distribution<std::size_t> ys(0, (height - crop) / 2);
    std::uniform_int_distribution<std::size_t> xs(0, (width - crop) / 2);
    d.y0 = 2 * ys(rng);
    d.x0 = 2 * xs(rng);
    if (geometric) {
        std::bernoulli_distribution coin(0.5);
        d.transpose = coin(rng);
        d.flip_h = coin(rng);
        d.flip_v = coin(rng);
    }
    return d;
}

namespace detail {

// Maps output (y, x) of the transformed crop to source coordinates.
struct GeometricMap {
    AugmentDraw d;
    std::size_t out_h() const { return d.transpose ? d.size_w : d.size_h; }
    std::size_t out_w() const { return d.transpose ? d.size_h : d.size_w; }
    std::pair<std::size_t, std::size_t> source(std::size_t y, std::size_t x) const {
        if (d.flip_v) y = out_h() - 1 - y;
        if (d.flip_h) x = out_w() - 1 - x;
        if (d.transpose) std::swap(y, x);
        return {d.y0 + y, d.x0 + x};
    }
};

} // namespace detail

/// Applies the same crop and geometric transform to mosaic and target. The
/// Bayer pattern is relabeled so the packed planes stay color-consistent.
inline Pair apply_augment(const Pair& pair, const AugmentDraw& d) {
    const RawFrame& src = pair.input;
    if (d.y0 % 2 != 0 || d.x0 % 2 != 0 || d.size_h % 2 != 0 || d.size_w % 2 != 0)
        throw InputError("augmentation crop must be even-aligned");
    if (d.y0 + d.size_h > src.height || d.x0 + d.size_w > src.width) throw InputError("crop exceeds image bounds");
    detail::GeometricMap map{d};
    const std::size_t H = map.out_h(), W = map.out_w();

    Pair out;
    out.scene = pair.scene;
    out.ratio = pair.ratio;
    out.input = src;
    out.input.height = H;
    out.input.width = W;
    out.input.mosaic.assign(H * W, 0.0f);
    const auto cell = cell_colors(src.pattern);
    CellColors new_cell{};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            auto [sy, sx] = map.source(y, x);
            out.input.mosaic[y * W + x] = src.at(sy, sx);
            if (y < 2 && x < 2) new_cell[y * 2 + x] = cell[(sy % 2) * 2 + sx % 2];
        }
    out.input.pattern = pattern_from_cell(new_cell);

    const Shape ts = pair.target.shape();
    std::vector<float> target(ts.c * H * W);
    for (std::size_t c = 0; c < ts.c; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                auto [sy, sx] = map.source(y, x);
                target[(c * H + y) * W + x] = pair.target.at(0, c, sy, sx);
            }
    out.target = Tensor<float>::from_data({1, ts.c, H, W}, std::move(target));
    return out;
}

inline Pair augment(const Pair& pair, std::size_t crop, std::uint64_t seed, bool geometric = true) {
    std::mt19937_64 rng(seed);
    return apply_augment(pair, draw_augment(pair.input.height, pair.input.width, crop, rng, geometric));
}

// ---------------------------------------------------------------------------
// File I/O

namespace io {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) | (static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& what() const { return what_; }

private:
    std::string bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

} // namespace io

/// Raw container: "ALRW", u16 version (1), u16 pattern, u32 H, u32 W, f32 black,
/// f32 white, f32 exposure_s, u32 iso, then H*W little-endian f32 counts.
inline std::string encode_raw(const RawFrame& raw) {
    raw.validate();
    std::string out = "ALRW";
    io::put_u16(out, 1);
    io::put_u16(out, static_cast<std::uint16_t>(raw.pattern));
    io::put_u32(out, static_cast<std::uint32_t>(raw.height));
    io::put_u32(out, static_cast<std::uint32_t>(raw.width));
    io::put_f32(out, raw.black_level);
    io::put_f32(out, raw.white_level);
    io::put_f32(out, raw.exposure_s);
    io::put_u32(out, raw.iso);
    out.reserve(out.size() + raw.mosaic.size() * 4);
    for (float v : raw.mosaic) io::put_f32(out, v);
    return out;
}

inline RawFrame decode_raw(std::string bytes, const std::string& what = "raw container") {
    io::Reader r(std::move(bytes), what);
    if (r.bytes(4) != "ALRW") throw FormatError(what + ": bad magic");
    if (auto v = r.u16(); v != 1) throw FormatError(what + ": unsupported version " + std::to_string(v));
    RawFrame raw;
    raw.pattern = pattern_from_code(r.u16());
    raw.height = r.u32();
    raw.width = r.u32();
    raw.black_level = r.f32();
    raw.white_level = r.f32();
    raw.exposure_s = r.f32();
    raw.iso = r.u32();
    if (raw.height == 0 || raw.width == 0 || raw.height % 2 || raw.width % 2)
        throw FormatError(what + ": dims must be even and positive");
    if (!std::isfinite(raw.black_level) || !std::isfinite(raw.white_level) || !(raw.black_level < raw.white_level) ||
        raw.black_level < 0)
        throw FormatError(what + ": invalid black/white levels");
    if (!std::isfinite(raw.exposure_s) || !(raw.exposure_s > 0)) throw FormatError(what + ": invalid exposure");
    const std::size_t count = raw.height * raw.width;
    if (r.remaining() != count * 4)
        throw FormatError(what + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(count * 4));
    raw.mosaic.resize(count);
    for (auto& v : raw.mosaic) {
        v = r.f32();
        if (!std::isfinite(v) || v < 0) throw FormatError(what + ": counts must be finite and non-negative");
    }
    return raw;
}

inline void save_raw(const std::filesystem::path& path, const RawFrame& raw) { io::write_file(path, encode_raw(raw)); }
inline RawFrame load_raw(const std::filesystem::path& path) { return decode_raw(io::read_file(path), path.string()); }

/// Binary 16-bit PPM (P6, maxval 65535, big-endian samples); values clamped to [0,1].
inline std::string encode_ppm16(const Tensor<float>& rgb) {
    const Shape s = rgb.shape();
    if (s.n != 1 || s.c != 3) throw DimensionError("save_rgb expects (1,3,H,W), got " + s.str());
    std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n65535\n";
    out.reserve(out.size() + s.plane() * 6);
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                float v = std::clamp(rgb.at(0, c, y, x), 0.0f, 1.0f);
                auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
                out.push_back(static_cast<char>(q >> 8));
                out.push_back(static_cast<char>(q & 0xff));
            }
    return out;
}

inline Tensor<float> decode_ppm16(const std::string& bytes, const std::string& what = "ppm") {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw FormatError(what + ": truncated header");
        return bytes.substr(start, pos - start);
    };
    if (token() != "P6") throw FormatError(what + ": not a binary PPM (P6)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::logic_error&) {
        throw FormatError(what + ": malformed header");
    }
    if (maxval != 65535) throw FormatError(what + ": expected maxval 65535, got " + std::to_string(maxval));
    if (w == 0 || h == 0) throw FormatError(what + ": empty image");
    ++pos; // single whitespace after maxval
    if (bytes.size() - std::min(pos, bytes.size()) != w * h * 6) throw FormatError(what + ": payload size mismatch");
    std::vector<float> data(3 * w * h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                std::size_t i = pos + ((y * w + x) * 3 + c) * 2;
                unsigned q = (static_cast<unsigned char>(bytes[i]) << 8) | static_cast<unsigned char>(bytes[i + 1]);
                data[(c * h + y) * w + x] = static_cast<float>(q) / 65535.0f;
            }
    return Tensor<float>::from_data({1, 3, h, w}, std::move(data));
}

inline void save_rgb(const std::filesystem::path& path, const Tensor<float>& rgb) {
    io::write_file(path, encode_ppm16(rgb));
}
inline Tensor<float> load_rgb(const std::filesystem::path& path) {
    return decode_ppm16(io::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Procedural scenes used as long-exposure references for synthetic datasets.

inline Tensor<float> generate_scene(std::size_t height, std::size_t width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<double, 3> base{}, gy{}, gx{};
    for (int c = 0; c < 3; ++c) {
        base[c] = 0.15 + 0.5 * u(rng);
        gy[c] = 0.3 * (u(rng) - 0.5);
        gx[c] = 0.3 * (u(rng) - 0.5);
    }
    std::vector<float> img(3 * height * width);
    for (int c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                img[(c * height + y) * width + x] = static_cast<float>(
                    base[c] + gy[c] * (static_cast<double>(y) / height - 0.5) + gx[c] * (static_cast<double>(x) / width - 0.5));

    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int k = 0; k < shapes; ++k) {
        std::array<double, 3> color{u(rng), u(rng), u(rng)};
        const double cy = u(rng) * height, cx = u(rng) * width;
        const double ry = (0.1 + 0.25 * u(rng)) * height, rx = (0.1 + 0.25 * u(rng)) * width;
        const bool disk = u(rng) < 0.5;
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
                bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) img[(c * height + y) * width + x] = static_cast<float>(color[c]);
            }
    }
    for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
    return Tensor<float>::from_data({1, 3, height, width}, std::move(img));
}

} // namespace alen
