// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any hard
// criterion fails. ALEN_ACCEPT_FAST=1 shortens the ablation report.

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "alen/alen.hpp"
#include "oracles.hpp"

using namespace alen;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << title << ": " << detail << std::endl;
    if (!pass) ++failures;
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream o;
    o << std::setprecision(precision) << v;
    return o.str();
}

Tensor<double> uniform(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = u(rng);
    return Tensor<double>::from_data(s, std::move(v));
}

void criterion_1() {
    std::cout << "[DECLARED] 1. Full-scale benchmark results: not reproducible at desk scale (requires the full "
                 "captured raw dataset and 4000-epoch training); covered by criteria 2-9."
              << std::endl;
}

void criterion_2() {
    const auto start = Clock::now();
    GradcheckOptions opt;
    const auto results = run_gradcheck_suite(opt, true);
    const double elapsed = seconds_since(start);
    double worst = 0;
    std::string worst_name, failed;
    for (const auto& r : results) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
        if (!r.passed) failed += " " + r.name;
    }
    for (const auto& r : results)
        std::cout << "       " << std::left << std::setw(20) << r.name << " max_rel " << std::scientific
                  << std::setprecision(2) << r.max_rel_error << std::defaultfloat << " over " << r.checked
                  << " entries" << std::endl;
    const bool pass = failed.empty() && elapsed < 300;
    report(2, "gradient suite", pass,
           std::to_string(results.size()) + " checks, worst " + fmt(worst) + " (" + worst_name + ") < 1e-4, " +
               fmt(elapsed) + " s < 300 s" + (failed.empty() ? "" : ", failed:" + failed));
}

void criterion_3() {
    std::mt19937_64 rng(303);
    const Shape s{1, 4, 6, 6};
    double worst = 0;
    for (std::size_t d : {1u, 2u})
        for (int trial = 0; trial < 20; ++trial) {
            auto x = uniform(s, rng);
            NonLocalParams<double> p{uniform({2, 4, 1, 1}, rng), uniform({2, 4, 1, 1}, rng), uniform({2, 4, 1, 1}, rng),
                                     uniform({4, 2, 1, 1}, rng), d};
            auto ref = oracle::non_local(oracle::flat(x), s, oracle::flat(p.theta), oracle::flat(p.phi),
                                         oracle::flat(p.g), oracle::flat(p.out), d);
            worst = std::max(worst, oracle::max_abs(ref, non_local_forward(x, p).data()));
        }
    report(3, "non-local oracle equivalence", worst < 1e-5, "40 inputs (d=1,2), max abs error " + fmt(worst) + " < 1e-5");
}

void criterion_4() {
    std::mt19937_64 rng(404);
    bool ok = true;
    std::string detail;
    for (std::size_t r : {1u, 2u, 4u}) {
        auto x = uniform({2, 3, 8, 8}, rng).cast<float>();
        auto back = ops::pixel_shuffle(ops::pixel_unshuffle(x, r), r);
        ok = ok && std::equal(x.data().begin(), x.data().end(), back.data().begin());
        auto z = uniform({2, 3 * r * r, 4, 4}, rng).cast<float>();
        auto back2 = ops::pixel_unshuffle(ops::pixel_shuffle(z, r), r);
        ok = ok && std::equal(z.data().begin(), z.data().end(), back2.data().begin());
    }
    detail += std::string("shuffle inverse ") + (ok ? "exact" : "MISMATCH");

    const Shape s{2, 8, 8, 8};
    auto x = uniform(s, rng);
    IslParams<double> isl{uniform({16, 32, 1, 1}, rng), uniform({1, 16, 1, 1}, rng)};
    const bool isl_ok = inverted_shuffle_forward(x, isl).shape() == Shape{2, 16, 4, 4};
    CabParams<double> cab{uniform({2, 8, 1, 1}, rng), uniform({1, 2, 1, 1}, rng), uniform({8, 2, 1, 1}, rng),
                          uniform({1, 8, 1, 1}, rng), 4};
    NonLocalParams<double> nl{uniform({4, 8, 1, 1}, rng), uniform({4, 8, 1, 1}, rng), uniform({4, 8, 1, 1}, rng),
                              uniform({8, 4, 1, 1}, rng), 2};
    MabParams<double> mab{nl,
                          {uniform({4, 16, 1, 1}, rng), uniform({1, 4, 1, 1}, rng), uniform({16, 4, 1, 1}, rng),
                           uniform({1, 16, 1, 1}, rng), 4},
                          uniform({8, 16, 1, 1}, rng),
                          uniform({1, 8, 1, 1}, rng)};
    const bool shapes_ok = channel_attention_forward(x, cab).shape() == s && non_local_forward(x, nl).shape() == s &&
                           mixed_attention_forward(x, mab).shape() == s;
    detail += std::string(", ISL halving ") + (isl_ok ? "ok" : "WRONG") + ", CAB/NL/MAB shapes " +
              (shapes_ok ? "preserved" : "WRONG");

    RawFrame raw;
    raw.height = raw.width = 16;
    std::uniform_real_distribution<float> counts(512.0f, 16383.0f);
    raw.mosaic.resize(256);
    for (auto& v : raw.mosaic) v = counts(rng);
    ModelConfig cfg;
    auto stacked = preprocess_raw<double>(raw, 64.0, cfg, false);
    auto packed = pack_bayer<double>(raw);
    bool stack_ok = stacked.shape() == Shape{1, 16, 8, 8};
    const std::size_t block = packed.numel();
    for (std::size_t k = 0; k < 4 && stack_ok; ++k)
        for (std::size_t i = 0; i < block; ++i) {
            const double unit = stacked.data()[2 * block + i];
            stack_ok = stack_ok && unit == packed.data()[i] * 64.0 && stacked.data()[k * block + i] == unit * cfg.ratios[k];
        }
    detail += std::string(", 16-channel stacking ") + (stack_ok ? "exact" : "MISMATCH");
    report(4, "structural identities", ok && isl_ok && shapes_ok && stack_ok, detail);
}

void criterion_5() {
    std::mt19937_64 rng(505);
    auto a = uniform({1, 3, 32, 32}, rng, 0, 1), b = uniform({1, 3, 32, 32}, rng, 0, 1);
    const double self = ssim_metric(a, a).item();
    const double combined = combine_terms(0.1, 0.8, 0.85);
    const double p = psnr_from_mse(0.01);
    const double asym = std::abs(ssim_metric(a, b).item() - ssim_metric(b, a).item());
    const bool pass = self == 1.0 && combined == 0.115 && p == 20.0 && asym < 1e-6;
    std::ostringstream d;
    d << std::setprecision(17) << "ssim(x,x) = " << self << ", combined = " << combined << ", psnr(0.01) = " << p
      << " dB, |ssim(x,y) - ssim(y,x)| = " << std::setprecision(3) << asym;
    report(5, "loss/metric properties", pass, d.str());
}

void criterion_6() {
    const auto cfg = TrainConfig::full_schedule();
    const double a = lr_at(0, cfg), b = lr_at(2000, cfg), c = lr_at(3500, cfg);
    std::ostringstream d;
    d << "lr(0) = " << a << ", lr(2000) = " << b << ", lr(3500) = " << c;
    report(6, "schedule fixture", a == 1e-4 && b == 2e-5 && c == 1e-5, d.str());
}

Pair overfit_pair(std::uint64_t seed) {
    SynthOptions opt;
    opt.count = 1;
    opt.size = 64;
    opt.ratios = {100.0};
    opt.seed = seed;
    return synth_dataset(opt)[0];
}

double overfit_psnr(std::uint64_t seed) {
    RunConfig rc;
    rc.train.augment = false;
    rc.train.lr0 = 5e-3;
    rc.train.schedule.clear();
    rc.model.seed = rc.train.seed = seed;
    const std::vector<Pair> data{overfit_pair(seed)};
    Trainer t(rc);
    t.run(data, 500);
    return evaluate(t.weights(), rc.model, data).pairs[0].psnr_db;
}

void criterion_7() {
    const auto start = Clock::now();
    const double p = overfit_psnr(7), elapsed = seconds_since(start);
    report(7, "overfit one 64x64 pair", p > 30 && elapsed < 600,
           "seed 7, 500 steps, PSNR " + fmt(p, 4) + " dB > 30, " + fmt(elapsed) + " s < 600 s");
    // Same recipe on other seeds; informational only.
    std::ostringstream d;
    for (std::uint64_t s : {0, 1}) d << " seed " << s << ": " << fmt(overfit_psnr(s), 4) << " dB";
    std::cout << "[REPORT] 7b. overfit seed sensitivity:" << d.str() << std::endl;
}

void criterion_8() {
    const bool fast = std::getenv("ALEN_ACCEPT_FAST") != nullptr;
    const auto start = Clock::now();
    SynthOptions opt;
    opt.count = 20;
    opt.size = 64;
    opt.seed = 8;
    const auto train_set = synth_dataset(opt);
    opt.count = 6;
    opt.seed = 88;
    const auto test_set = synth_dataset(opt);
    const std::size_t epochs = fast ? 4 : 60;
    const char* names[] = {"backbone", "cab", "mab", "full"};
    const double reference[] = {28.57, 29.49, 29.70, 29.86};
    std::vector<double> measured;
    for (int i = 0; i < 4; ++i) {
        RunConfig rc;
        apply_ablation(rc.model, names[i]);
        rc.model.seed = rc.train.seed = 8;
        rc.train.lr0 = 5e-3;
        rc.train.epochs = epochs;
        rc.train.schedule = {{epochs / 2, 2.5e-3}, {epochs * 3 / 4, 1.25e-3}};
        Trainer t(rc);
        t.run(train_set, epochs);
        measured.push_back(evaluate(t.weights(), rc.model, test_set).groups.back().psnr_db);
        std::cout << "       " << std::left << std::setw(9) << names[i] << " desk PSNR " << std::fixed
                  << std::setprecision(2) << measured.back() << " dB   reference " << reference[i] << " dB"
                  << std::defaultfloat << std::endl;
    }
    bool monotone = true;
    for (int i = 1; i < 4; ++i) monotone = monotone && measured[i] > measured[i - 1];
    std::cout << "[REPORT] 8. ablation trend (soft): " << epochs << " epochs x 20 scenes per config, desk ordering "
              << (monotone ? "matches" : "does not match") << " the reference ordering backbone < cab < mab < full, "
              << fmt(seconds_since(start)) << " s" << std::endl;
}

void criterion_9() {
    SynthOptions opt;
    opt.count = 3;
    opt.size = 32;
    opt.seed = 9;
    const auto data = synth_dataset(opt);
    RunConfig rc;
    rc.train.crop = 32;
    rc.model.seed = rc.train.seed = 9;

    Trainer a(rc), b(rc);
    const auto ha = a.run(data, 4), hb = b.run(data, 4);
    bool same = true;
    for (std::size_t i = 0; i < ha.size(); ++i) same = same && ha[i].mean_loss == hb[i].mean_loss;
    const std::string ck_a = encode_checkpoint(a.checkpoint());
    same = same && ck_a == encode_checkpoint(b.checkpoint());

    Trainer first(rc);
    first.run(data, 2);
    Trainer resumed(decode_checkpoint(encode_checkpoint(first.checkpoint())));
    const auto rest = resumed.run(data, 4);
    const bool resume_ok = rest.size() == 2 && rest[0].mean_loss == ha[2].mean_loss &&
                           rest[1].mean_loss == ha[3].mean_loss && encode_checkpoint(resumed.checkpoint()) == ck_a;

    const std::string raw_bytes = encode_raw(data[0].input);
    const bool raw_ok = encode_raw(decode_raw(raw_bytes)) == raw_bytes;
    const bool ck_ok = encode_checkpoint(decode_checkpoint(ck_a)) == ck_a;
    report(9, "determinism and persistence", same && resume_ok && raw_ok && ck_ok,
           std::string("seeded runs ") + (same ? "bit-identical" : "DIFFER") + ", resume " +
               (resume_ok ? "exact" : "DIVERGES") + ", raw round-trip " + (raw_ok ? "byte-identical" : "DIFFERS") +
               ", checkpoint round-trip " + (ck_ok ? "byte-identical" : "DIFFERS"));
}

} // namespace

int main() {
    const auto start = Clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    std::cout << (failures == 0 ? "ALL HARD CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << " ("
              << fmt(seconds_since(start)) << " s)" << std::endl;
    return failures == 0 ? 0 : 1;
}
