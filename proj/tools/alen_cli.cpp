// alen: train, run and evaluate the low-light raw enhancement network.
//
// Exit codes: 0 success, 1 gradient check failure, 2 bad arguments or config,
// 3 data or file error, 4 non-finite training loss.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "alen/alen.hpp"

namespace fs = std::filesystem;
using namespace alen;

namespace {

constexpr int kExitGradcheck = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNonFinite = 4;

void echo_config(const RunConfig& rc) {
    std::cerr << "# resolved config\n" << format_config(rc) << "# end config\n";
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string ablation;
    std::string resume;
    std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& a) {
    RunConfig rc;
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        rc = resume->config;
    } else {
        if (!a.config.empty()) rc = load_config(a.config);
        if (!a.ablation.empty()) apply_ablation(rc.model, a.ablation);
        if (a.seed) rc.model.seed = rc.train.seed = *a.seed;
    }
    if (a.epochs) rc.train.epochs = *a.epochs;
    rc.model.validate();
    rc.train.validate();
    echo_config(rc);

    const auto dataset = load_dataset(a.data);
    std::cerr << "loaded " << dataset.size() << " pairs from " << a.data << "\n";
    fs::create_directories(a.out);

    std::optional<Trainer> trainer;
    if (resume) {
        Checkpoint ck = *resume;
        ck.config.train.epochs = rc.train.epochs;
        trainer.emplace(ck);
    } else {
        trainer.emplace(rc);
    }
    const std::size_t every = rc.train.checkpoint_every;
    auto history = trainer->run(dataset, rc.train.epochs, [&](const EpochRecord& r, const Trainer& t) {
        std::cerr << "epoch " << r.epoch << " loss " << config_detail::fmt_double(r.mean_loss) << " lr "
                  << config_detail::fmt_double(r.lr) << "\n";
        if (every > 0 && t.epoch() % every == 0)
            save_checkpoint(fs::path(a.out) / ("epoch_" + std::to_string(t.epoch()) + ".alck"), t.checkpoint());
    });
    save_checkpoint(fs::path(a.out) / "final.alck", trainer->checkpoint());
    io::write_file(fs::path(a.out) / "loss.csv", format_history_csv(history));
    std::cout << format_history_csv(history);
    return 0;
}

struct InferArgs {
    std::string checkpoint;
    std::string input;
    double ratio = 0;
    std::string out;
};

int cmd_infer(const InferArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    echo_config(ck.config);
    const RawFrame raw = load_raw(a.input);
    auto rgb = enhance(ck.weights.cast<float>(false), ck.config.model, raw, a.ratio);
    if (auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_rgb(a.out, rgb);
    std::cout << a.out << " " << rgb.shape().w << "x" << rgb.shape().h << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    bool self_check = false;
};

int cmd_eval(const EvalArgs& a) {
    if (!a.self_check && a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required unless --self-check");
    const auto dataset = load_dataset(a.data);
    MetricsReport rep;
    if (a.self_check) {
        std::vector<PairMetrics> rows;
        for (const auto& p : dataset) rows.push_back(score_pair(p.scene, p.ratio, p.target, p.target));
        rep = summarize(std::move(rows));
    } else {
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        echo_config(ck.config);
        rep = evaluate(ck, dataset);
    }
    fs::create_directories(a.out);
    io::write_file(fs::path(a.out) / "metrics.csv", format_metrics_csv(rep));
    std::cout << format_metrics_table(rep);
    return 0;
}

struct GradcheckArgs {
    std::string perturb;
    bool no_network = false;
    std::uint64_t seed = 1234;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    GradcheckOptions opt;
    opt.seed = a.seed;
    debug::perturbed_backward_op() = a.perturb;
    std::cerr << "gradcheck step " << opt.step << " tolerance " << opt.tolerance << " seed " << opt.seed
              << (a.perturb.empty() ? "" : " perturbing " + a.perturb) << "\n";
    const auto results = run_gradcheck_suite(opt, !a.no_network);
    debug::perturbed_backward_op().clear();
    std::cout << "op,max_rel_error,checked,status\n";
    bool ok = true;
    for (const auto& r : results) {
        std::cout << r.name << "," << r.max_rel_error << "," << r.checked << "," << (r.passed ? "pass" : "FAIL") << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : kExitGradcheck;
}

struct SynthArgs {
    std::string out;
    std::size_t count = 20;
    std::size_t size = 64;
    std::vector<double> ratios{100, 250, 300};
    std::uint64_t seed = 0;
    std::string sources;
    double shot_gain = 1e-5;
    double read_variance = 1e-7;
    std::string pattern = "RGGB";
};

int cmd_synth(const SynthArgs& a) {
    SynthOptions opt;
    opt.count = a.count;
    opt.size = a.size;
    opt.ratios = a.ratios;
    opt.seed = a.seed;
    opt.noise = NoiseModel{a.shot_gain, a.read_variance, 0};
    opt.pattern = parse_pattern(a.pattern);
    if (opt.size == 0 || opt.size % 2 != 0) throw ConfigError("synth: --size must be even and positive");
    std::vector<Tensor<float>> sources;
    if (!a.sources.empty()) {
        if (!fs::is_directory(a.sources)) throw FormatError("synth: sources directory not found: " + a.sources);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a.sources))
            if (e.path().extension() == ".ppm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FormatError("synth: no .ppm files in " + a.sources);
        for (const auto& f : files) {
            auto img = load_rgb(f);
            const Shape s = img.shape();
            if (s.h % 2 || s.w % 2) throw FormatError("synth: source " + f.string() + " has odd dims");
            sources.push_back(img);
        }
    }
    std::cerr << "synth count " << opt.count << " size " << opt.size << " seed " << opt.seed << " shot_gain "
              << opt.noise.shot_gain << " read_variance " << opt.noise.read_variance << " pattern " << a.pattern
              << "\n";
    const auto pairs = synth_dataset(opt, sources);
    save_dataset(a.out, pairs);
    std::cout << pairs.size() << " pairs written to " << a.out << "\n";
    return 0;
}

struct ParamsArgs {
    std::string config;
    std::string ablation;
};

int cmd_params(const ParamsArgs& a) {
    RunConfig rc;
    if (!a.config.empty()) rc = load_config(a.config);
    if (!a.ablation.empty()) apply_ablation(rc.model, a.ablation);
    rc.model.validate();
    echo_config(rc);
    std::cout << build<float>(rc.model).parameter_count() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-light raw image enhancement: training, inference and evaluation"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model on a dataset directory");
    t->add_option("--config", train.config, "Config file (key = value)")->check(CLI::ExistingFile);
    t->add_option("--data", train.data, "Dataset directory")->required();
    t->add_option("--out", train.out, "Output directory")->required();
    t->add_option("--seed", train.seed, "Seed for weights and training randomness");
    t->add_option("--ablation", train.ablation, "backbone | cab | mab | full");
    t->add_option("--resume", train.resume, "Checkpoint to resume from");
    t->add_option("--epochs", train.epochs, "Override the total epoch count");

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Enhance one raw container to a 16-bit PPM");
    i->add_option("--checkpoint", infer.checkpoint)->required();
    i->add_option("--input", infer.input)->required();
    i->add_option("--ratio", infer.ratio, "Amplification ratio")->required();
    i->add_option("--out", infer.out, "Output PPM path")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    e->add_option("--checkpoint", eval.checkpoint);
    e->add_option("--data", eval.data)->required();
    e->add_option("--out", eval.out, "Output directory for metrics.csv")->required();
    e->add_flag("--self-check", eval.self_check, "Score each target against itself");

    GradcheckArgs grad;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
    g->add_option("--perturb", grad.perturb, "Scale the backward rule of this op (negative control)");
    g->add_flag("--no-network", grad.no_network, "Skip the whole-network check");
    g->add_option("--seed", grad.seed);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic low-light dataset");
    s->add_option("--out", synth.out)->required();
    s->add_option("--count", synth.count);
    s->add_option("--size", synth.size);
    s->add_option("--ratios", synth.ratios)->delimiter(',');
    s->add_option("--seed", synth.seed);
    s->add_option("--sources", synth.sources, "Directory of 16-bit PPM references");
    s->add_option("--shot-gain", synth.shot_gain);
    s->add_option("--read-variance", synth.read_variance);
    s->add_option("--pattern", synth.pattern, "RGGB | BGGR | GRBG | GBRG");

    ParamsArgs params;
    auto* p = app.add_subcommand("params", "Print the parameter count of a config");
    p->add_option("--config", params.config)->check(CLI::ExistingFile);
    p->add_option("--ablation", params.ablation);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*t) return cmd_train(train);
        if (*i) return cmd_infer(infer);
        if (*e) return cmd_eval(eval);
        if (*g) return cmd_gradcheck(grad);
        if (*s) return cmd_synth(synth);
        if (*p) return cmd_params(params);
    } catch (const NonFiniteLoss& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitNonFinite;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
