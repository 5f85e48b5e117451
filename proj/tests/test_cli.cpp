#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "alen/alen.hpp"

namespace fs = std::filesystem;
using namespace alen;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

const fs::path& workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "alen_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result run(const std::string& args) {
    const fs::path err_file = workdir() / "stderr.txt";
    const std::string cmd = std::string(ALEN_CLI_PATH) + " " + args + " 2>" + err_file.string();
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err_file);
    return r;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

const std::string& tiny_config() {
    static const std::string p = [] {
        std::ofstream(path("tiny.cfg")) << "base_width = 4\ndepth = 2\ncab_reduction = 2\ncrop = 16\nepochs = 2\n"
                                           "lr0 = 1e-3\nschedule = none\n";
        return path("tiny.cfg");
    }();
    return p;
}

const std::string& synth_dir() {
    static const std::string d = [] {
        auto r = run("synth --out " + path("data") + " --count 3 --size 16 --seed 2");
        EXPECT_EQ(r.code, 0) << r.err;
        return path("data");
    }();
    return d;
}

const std::string& trained() {
    static const std::string ck = [] {
        auto r = run("train --config " + tiny_config() + " --data " + synth_dir() + " --out " + path("run1"));
        EXPECT_EQ(r.code, 0) << r.err;
        return path("run1") + "/final.alck";
    }();
    return ck;
}

} // namespace

TEST(Cli, SynthWritesManifest) {
    const std::string manifest = slurp(fs::path(synth_dir()) / "dataset.csv");
    EXPECT_EQ(manifest.substr(0, manifest.find('\n')), "scene,raw,target,ratio");
    EXPECT_EQ(load_dataset(synth_dir()).size(), 3u);
}

TEST(Cli, TrainProducesCheckpointAndLossCsv) {
    ASSERT_TRUE(fs::exists(trained()));
    const std::string csv = slurp(path("run1") + "/loss.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,mean_loss,lr");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    auto ck = load_checkpoint(trained());
    EXPECT_EQ(ck.epoch, 2u);
    EXPECT_EQ(ck.config.model.base_width, 4u);
}

TEST(Cli, TrainEchoesResolvedConfig) {
    auto r = run("train --config " + tiny_config() + " --data " + synth_dir() + " --out " + path("run_seed") +
                 " --seed 11 --ablation cab --epochs 1");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("seed = 11"), std::string::npos);
    EXPECT_NE(r.err.find("enable_mab = false"), std::string::npos);
    EXPECT_NE(r.err.find("epochs = 1"), std::string::npos);
}

TEST(Cli, ResumeMatchesUninterrupted) {
    auto a = run("train --config " + tiny_config() + " --data " + synth_dir() + " --out " + path("half") + " --epochs 1");
    ASSERT_EQ(a.code, 0) << a.err;
    auto b = run("train --resume " + path("half") + "/final.alck --data " + synth_dir() + " --out " + path("resumed") +
                 " --epochs 2");
    ASSERT_EQ(b.code, 0) << b.err;
    auto resumed = load_checkpoint(path("resumed") + "/final.alck");
    auto full = load_checkpoint(trained());
    for (const auto& [name, t] : full.weights.params) {
        auto other = resumed.weights.at(name).data();
        ASSERT_TRUE(std::equal(t.data().begin(), t.data().end(), other.begin())) << name;
    }
}

TEST(Cli, MissingDatasetIsDataError) {
    auto r = run("train --config " + tiny_config() + " --data " + path("nowhere") + " --out " + path("run_x"));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find(path("nowhere")), std::string::npos) << r.err;
}

TEST(Cli, BadArgumentsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("train --data x").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("params --ablation sideways").code, 2);
    std::ofstream(path("bad.cfg")) << "depth = banana\n";
    EXPECT_EQ(run("params --config " + path("bad.cfg")).code, 2);
}

TEST(Cli, InferWritesMatchingPpmDeterministically) {
    const auto pairs = load_dataset(synth_dir());
    const std::string raw = synth_dir() + "/" + pairs[0].scene + ".alrw";
    auto a = run("infer --checkpoint " + trained() + " --input " + raw + " --ratio 100 --out " + path("a.ppm"));
    ASSERT_EQ(a.code, 0) << a.err;
    auto b = run("infer --checkpoint " + trained() + " --input " + raw + " --ratio 100 --out " + path("b.ppm"));
    ASSERT_EQ(b.code, 0) << b.err;
    auto img = load_rgb(path("a.ppm"));
    EXPECT_EQ(img.shape(), (Shape{1, 3, 16, 16}));
    EXPECT_EQ(slurp(path("a.ppm")), slurp(path("b.ppm")));
    EXPECT_EQ(run("infer --checkpoint " + trained() + " --input " + path("missing.alrw") + " --ratio 100 --out " +
                  path("c.ppm"))
                  .code,
              3);
    std::ofstream(path("junk.alrw")) << "not a raw file";
    EXPECT_EQ(
        run("infer --checkpoint " + trained() + " --input " + path("junk.alrw") + " --ratio 100 --out " + path("c.ppm"))
            .code,
        3);
}

TEST(Cli, ZeroWeightsGiveConstantImage) {
    Checkpoint ck;
    ck.config = parse_config(slurp(tiny_config()));
    ck.weights = build<float>(ck.config.model);
    for (auto& [name, t] : ck.weights.params)
        for (auto& v : t.mutable_data()) v = 0.0f;
    ck.rng_state = [] {
        std::ostringstream o;
        o << std::mt19937_64(0);
        return o.str();
    }();
    save_checkpoint(path("zero.alck"), ck);
    const auto pairs = load_dataset(synth_dir());
    const std::string raw = synth_dir() + "/" + pairs[1].scene + ".alrw";
    ASSERT_EQ(run("infer --checkpoint " + path("zero.alck") + " --input " + raw + " --ratio 250 --out " +
                  path("zero.ppm"))
                  .code,
              0);
    auto img = load_rgb(path("zero.ppm"));
    for (float v : img.data()) EXPECT_EQ(v, img.data()[0]);
}

TEST(Cli, EvalWritesMetricsAndTable) {
    auto r = run("eval --checkpoint " + trained() + " --data " + synth_dir() + " --out " + path("eval"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(path("eval") + "/metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scene,ratio,psnr_db,ssim");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "group,count,psnr,ssim");
    EXPECT_NE(r.out.find("\nx100,1,"), std::string::npos);
    EXPECT_NE(r.out.find("\nx250,1,"), std::string::npos);
    EXPECT_NE(r.out.find("\nx300,1,"), std::string::npos);
    EXPECT_NE(r.out.find("\nall,3,"), std::string::npos);
}

TEST(Cli, EvalSelfCheckGivesUnitSsim) {
    auto r = run("eval --self-check --data " + synth_dir() + " --out " + path("self"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream csv(slurp(path("self") + "/metrics.csv"));
    std::string line;
    std::getline(csv, line);
    int rows = 0;
    while (std::getline(csv, line)) {
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "1.000000") << line;
        EXPECT_NE(line.find(",inf,"), std::string::npos) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 3);
}

TEST(Cli, ParamsPrintsCount) {
    auto r = run("params --config " + tiny_config());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, std::to_string(build<float>(parse_config(slurp(tiny_config())).model).parameter_count()) + "\n");
}

TEST(Cli, GradcheckPassesAndNegativeControlFails) {
    auto ok = run("gradcheck --no-network");
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(ok.out.substr(0, ok.out.find('\n')), "op,max_rel_error,checked,status");
    EXPECT_NE(ok.out.find("\nnon_local_d2,"), std::string::npos);
    auto bad = run("gradcheck --no-network --perturb conv2d");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}
