#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "cmdm/cmdm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cmdm;

namespace {

struct Outcome {
    int code;
    std::string output;
};

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("cmdm_cli_" + std::to_string(::getpid()) + "_" + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Outcome run(const std::string& args) const {
        const fs::path log = dir_ / "last_output.txt";
        const std::string cmd = std::string(CMDM_TOOL_PATH) + " " + args + " > " + log.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
    }

    void ok(const std::string& args) const {
        const Outcome o = run(args);
        ASSERT_EQ(o.code, 0) << args << "\n" << o.output;
    }

    static std::string slurp(const std::string& p) { return read_file(p); }

    /// Small data set and two tiny trained models on a 32x32 grid.
    void make_models() {
        ok("phantom --shape 32 --count 12 --seed 3 --out " + path("train"));
        const std::string common = " --epochs 1 --channels 2 --depth 2 --levels 4 --seed 1 --data " + path("train");
        ok("train --operator weight --out " + path("w.ckpt") + common);
        ok("train --operator mask --out " + path("m.ckpt") + common);
        ok("phantom --shape 32 --count 1 --coils 2 --seed 77 --out " + path("ref"));
    }

    fs::path dir_;
};

TEST_F(CliTest, PhantomCountShapeAndCoils) {
    ok("phantom --count 200 --shape 64 --seed 1 --out " + path("a"));
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(path("a"))) n += e.path().extension() == ".c64";
    EXPECT_EQ(n, 200u);
    EXPECT_TRUE(fs::exists(path("a/manifest.json")));

    ok("phantom --coils 4 --shape 64 --out " + path("b"));
    const CoilStack s = read_array(path("b/phantom_0000.c64"));
    EXPECT_EQ(s.coils(), 4u);
    EXPECT_EQ(s.rows(), 64u);
    EXPECT_EQ(s.cols(), 64u);
    EXPECT_EQ(s.domain(), Domain::Image);
}

TEST_F(CliTest, SameSeedGivesIdenticalFiles) {
    ok("phantom --count 3 --shape 48 --seed 11 --out " + path("a"));
    ok("phantom --count 3 --shape 48 --seed 11 --out " + path("b"));
    ok("phantom --count 3 --shape 48 --seed 12 --out " + path("c"));
    for (int i = 0; i < 3; ++i) {
        const std::string f = "/phantom_000" + std::to_string(i) + ".c64";
        EXPECT_EQ(slurp(path("a") + f), slurp(path("b") + f));
        EXPECT_NE(slurp(path("a") + f), slurp(path("c") + f));
    }
    ok("mask --pattern poisson --shape 64 --accel 4 --seed 5 --out " + path("m1"));
    ok("mask --pattern poisson --shape 64 --accel 4 --seed 5 --out " + path("m2"));
    EXPECT_EQ(slurp(path("m1")), slurp(path("m2")));
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("phantom --count two --out " + path("x")).code, 1);
    EXPECT_EQ(run("phantom --no-such-flag 1 --out " + path("x")).code, 1);
    EXPECT_EQ(run("mask --pattern zigzag --out " + path("x")).code, 1);
    EXPECT_EQ(run("mask --accel 0.5 --out " + path("x")).code, 1);
    EXPECT_EQ(run("train --data " + path("missing") + " --out " + path("x")).code, 2);

    std::ofstream(path("junk.c64")) << "not an array";
    EXPECT_EQ(run("acquire --data " + path("junk.c64") + " --mask " + path("junk.c64") + " --out " + path("k")).code, 2);
    EXPECT_EQ(run("verify appendixA --tol 0").code, 3);
}

TEST_F(CliTest, AcquireZeroesUnsampledEntries) {
    ok("phantom --shape 32 --coils 2 --out " + path("p"));
    ok("mask --pattern uniform1d --shape 32 --accel 4 --seed 2 --out " + path("m"));
    ok("acquire --data " + path("p/phantom_0000.c64") + " --mask " + path("m") + " --out " + path("k"));
    const CoilStack k = read_array(path("k"));
    const CoilStack img = read_array(path("p/phantom_0000.c64"));
    const SamplingMask m = read_mask(path("m"));
    EXPECT_EQ(k.domain(), Domain::KSpace);
    const CoilStack full = quantize_f32(fft2c(img));
    for (std::size_t c = 0; c < k.coils(); ++c)
        for (std::size_t i = 0; i < m.omega.size(); ++i) EXPECT_EQ(k[c][i], m.sampled(i) ? full[c][i] : cplx{});
}

TEST_F(CliTest, ZeroEpochsGivesInitialization) {
    ok("phantom --shape 32 --count 6 --out " + path("d"));
    ok("train --data " + path("d") + " --operator mask --epochs 0 --channels 3 --depth 2 --seed 4 --out " + path("c"));
    const TrainableScore loaded = load_checkpoint(path("c"));
    TrainableScore fresh(loaded.architecture(), loaded.op(), 4);
    quantize_parameters(fresh);
    EXPECT_EQ(loaded.parameters(), fresh.parameters());
    EXPECT_EQ(loaded.op().kind, OperatorKind::Mask);
    EXPECT_EQ(loaded.op().window, scaled_window(50, 32));
}

TEST_F(CliTest, FullSamplingReturnsInverseTransform) {
    make_models();
    ok("mask --shape 32 --accel 1 --out " + path("full"));
    ok("acquire --data " + path("ref/phantom_0000.c64") + " --mask " + path("full") + " --out " + path("k"));
    ok("reconstruct --meas " + path("k") + " --mask " + path("full") + " --model-w " + path("w.ckpt") + " --model-m " +
       path("m.ckpt") + " --iters 5 --out " + path("r"));
    const CoilStack got = read_array(path("r"));
    const CoilStack want = quantize_f32(ifft2c(read_array(path("k"))));
    ASSERT_EQ(got.coils(), want.coils());
    for (std::size_t c = 0; c < got.coils(); ++c) EXPECT_EQ(got[c], want[c]);
}

TEST_F(CliTest, ParallelWithUnitFirstWeightMatchesWeightAblation) {
    make_models();
    ok("mask --shape 32 --accel 4 --seed 1 --out " + path("m"));
    ok("acquire --data " + path("ref/phantom_0000.c64") + " --mask " + path("m") + " --out " + path("k"));
    const std::string base = "reconstruct --meas " + path("k") + " --mask " + path("m") + " --model-w " + path("w.ckpt") +
                             " --model-m " + path("m.ckpt") + " --iters 6 --seed 9";
    ok(base + " --mode parallel --l1 1 --l2 0 --out " + path("p"));
    ok(base + " --branches weight --out " + path("w"));
    ok(base + " --mode serial --out " + path("s"));
    EXPECT_EQ(slurp(path("p")), slurp(path("w")));
    EXPECT_NE(slurp(path("s")), slurp(path("w")));
    EXPECT_EQ(run(base + " --mode parallel --l1 0.7 --l2 0.7 --out " + path("bad")).code, 1);
    EXPECT_EQ(run(base + " --branches full --out " + path("bad")).code, 1);
}

TEST_F(CliTest, ReconstructWritesImagePgmMetricsAndManifest) {
    make_models();
    ok("mask --shape 32 --accel 4 --seed 1 --out " + path("m"));
    ok("acquire --data " + path("ref/phantom_0000.c64") + " --mask " + path("m") + " --out " + path("k"));
    ok("reconstruct --meas " + path("k") + " --mask " + path("m") + " --model-w " + path("w.ckpt") + " --model-m " +
       path("m.ckpt") + " --iters 4 --ref " + path("ref/phantom_0000.c64") + " --image-id img7 --out " + path("r"));
    EXPECT_EQ(read_array(path("r")).coils(), 2u);
    EXPECT_EQ(slurp(path("r.pgm")).substr(0, 3), "P5\n");

    std::istringstream csv(slurp(path("r.csv")));
    std::string header, row, zf;
    std::getline(csv, header);
    std::getline(csv, row);
    std::getline(csv, zf);
    EXPECT_EQ(header, "image_id,pattern,R,method,psnr_db,ssim,mse");
    EXPECT_EQ(row.rfind("img7,random2d,4,serial,", 0), 0u) << row;
    EXPECT_EQ(zf.rfind("img7,random2d,4,zero-filled,", 0), 0u) << zf;

    const json m = json::parse(slurp(path("r.manifest.json")));
    EXPECT_EQ(m["tool"], "cmdm");
    EXPECT_EQ(m["command"], "reconstruct");
    EXPECT_EQ(m["config"]["iters"], "4");
    EXPECT_EQ(m["config"]["mode"], "serial");
    EXPECT_TRUE(m["seeds"].contains("seed"));
    EXPECT_EQ(m["inputs"]["meas"]["sha256"]["k"].get<std::string>().size(), 64u);
    EXPECT_TRUE(m.contains("tool_version"));
    EXPECT_EQ(m["outputs"].size(), 3u);
}

TEST_F(CliTest, ReplayIsBitExact) {
    make_models();
    ok("mask --shape 32 --accel 4 --seed 1 --out " + path("m"));
    ok("acquire --data " + path("ref/phantom_0000.c64") + " --mask " + path("m") + " --out " + path("k"));
    ok("reconstruct --meas " + path("k") + " --mask " + path("m") + " --model-w " + path("w.ckpt") + " --model-m " +
       path("m.ckpt") + " --iters 5 --seed 3 --ref " + path("ref/phantom_0000.c64") + " --out " + path("r"));
    ok("replay --manifest " + path("r.manifest.json") + " --out " + path("again"));
    EXPECT_EQ(slurp(path("r")), slurp(path("again")));
    EXPECT_EQ(slurp(path("r.csv")), slurp(path("again.csv")));

    ok("replay --manifest " + path("train/manifest.json") + " --out " + path("train2"));
    EXPECT_EQ(slurp(path("train/phantom_0011.c64")), slurp(path("train2/phantom_0011.c64")));

    ok("replay --manifest " + path("w.ckpt.manifest.json") + " --out " + path("w2.ckpt"));
    EXPECT_EQ(slurp(path("w.ckpt")), slurp(path("w2.ckpt")));

    // Changed inputs are refused.
    ok("mask --shape 32 --accel 4 --seed 2 --out " + path("m"));
    EXPECT_EQ(run("replay --manifest " + path("r.manifest.json") + " --out " + path("third")).code, 2);
}

TEST_F(CliTest, ConfigFileSuppliesFlagsAndCommandLineWins) {
    std::ofstream(path("c.json")) << R"({"pattern": "uniform1d", "accel": 8, "shape": 32, "seed": 4, "calib": 2})";
    ok("mask --config " + path("c.json") + " --accel 2 --out " + path("m"));
    const SamplingMask m = read_mask(path("m"));
    EXPECT_EQ(m.pattern, MaskPattern::Uniform1D);
    EXPECT_EQ(m.accel, 2.0);
    EXPECT_EQ(m.seed, 4u);
    EXPECT_EQ(m.rows(), 32u);

    std::ofstream(path("bad.json")) << R"({"no-such-option": 1})";
    EXPECT_EQ(run("mask --config " + path("bad.json") + " --out " + path("x")).code, 1);
    std::ofstream(path("broken.json")) << "{";
    EXPECT_EQ(run("mask --config " + path("broken.json") + " --out " + path("x")).code, 2);
}

TEST_F(CliTest, VerifyAppendixA) {
    const Outcome o = run("verify appendixA --out " + path("a.txt"));
    ASSERT_EQ(o.code, 0) << o.output;
    const auto pos = o.output.find("max_deviation ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(std::stod(o.output.substr(pos + 14)), 1e-10);
    EXPECT_TRUE(fs::exists(path("a.txt.manifest.json")));
}

TEST_F(CliTest, VerifyTheorem1) {
    ok("verify theorem1 --draws 20000 --seed 2 --out " + path("t.csv"));
    std::istringstream csv(slurp(path("t.csv")));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line.rfind("alpha,lhs,rhs_sum,corr_term,corr_se", 0), 0u);
    std::vector<std::vector<double>> rows;
    while (std::getline(csv, line)) {
        std::vector<double> r;
        std::stringstream ss(line);
        for (std::string tok; std::getline(ss, tok, ',');) r.push_back(std::stod(tok));
        rows.push_back(r);
    }
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0][0], 0.0);
    EXPECT_LT(std::abs(rows[0][3]), 3.0 * rows[0][4]);
    EXPECT_GT(rows[0][1], rows[1][1]);
    EXPECT_GT(rows[1][1], rows[2][1]);
}

TEST_F(CliTest, CorrelateDeduplicatesWindows) {
    ok("phantom --shape 64 --count 3 --seed 5 --out " + path("d"));
    ok("correlate --data " + path("d") + " --window-list 30,50,70,50 --out " + path("c.csv"));
    std::istringstream csv(slurp(path("c.csv")));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "image_id,window,window_px,rho");
    std::size_t n = 0;
    while (std::getline(csv, line)) {
        ++n;
        const double rho = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_GE(rho, -1.0);
        EXPECT_LE(rho, 1.0);
    }
    EXPECT_EQ(n, 9u);
    EXPECT_EQ(run("correlate --data " + path("d") + " --window-list 30,x --out " + path("e.csv")).code, 1);
}

TEST_F(CliTest, VerifyConvergenceWritesCurves) {
    make_models();
    ok("train --operator identity --epochs 1 --channels 2 --depth 2 --levels 4 --seed 1 --data " + path("train") +
       " --out " + path("f.ckpt"));
    ok("verify convergence --model-w " + path("w.ckpt") + " --model-m " + path("m.ckpt") + " --model-full " + path("f.ckpt") +
       " --iters 7 --out " + path("cv.csv"));
    std::istringstream csv(slurp(path("cv.csv")));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "iteration,chain,psnr,ssim");
    std::map<std::string, std::size_t> counts;
    while (std::getline(csv, line)) ++counts[line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1)];
    EXPECT_EQ(counts, (std::map<std::string, std::size_t>{{"combined", 7}, {"full", 7}, {"mask", 7}, {"weight", 7}}));
}

} // namespace
