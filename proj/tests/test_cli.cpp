#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deepsteg/cli.hpp"
#include "deepsteg/deepsteg.hpp"
#include "support/synthetic.hpp"

using namespace deepsteg;
using deepsteg::support::smooth_image;
using deepsteg::support::TempDir;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "deepsteg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

class CliFixture : public ::testing::Test {
protected:
    void SetUp() override {
        NetworkSpec spec;
        spec.k = 2;
        Checkpoint c;
        c.model = init_params<float>(spec, 3);
        c.config.k = 2;
        save_checkpoint(c, dir / "k2.ckpt");
        save_image(smooth_image(1), dir / "cover.png");
        save_image(smooth_image(2), dir / "s1.png");
        save_image(smooth_image(3), dir / "s2.png");
    }
    std::string p(const std::string& name) const { return (dir / name).string(); }
    TempDir dir;
};

} // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
    EXPECT_EQ(run_cli({"decode", "--no-such-flag", "x"}).code, 1);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    const auto r = run_cli({"decode", "--container", "c.png", "--out-dir", "o"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--model"), std::string::npos) << r.err;
}

TEST(Cli, InvalidSettingIsUsageError) {
    TempDir dir;
    EXPECT_EQ(run_cli({"train", "--k", "0", "--data-root", dir.path().string()}).code, 1);
    EXPECT_EQ(run_cli({"lsb-decode", "--container", "x.png", "--k", "4", "--bits-per-secret", "2",
                       "--out-dir", dir.path().string()}).code, 1);
}

TEST_F(CliFixture, EncodeDecodeRoundTrip) {
    const auto enc = run_cli({"encode", "--model", p("k2.ckpt"), "--cover", p("cover.png"), "--secret",
                              p("s1.png"), "--secret", p("s2.png"), "--out", p("container.png"), "--diff-gain", "10"});
    ASSERT_EQ(enc.code, 0) << enc.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "container.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "container_diff_gain10.png"));
    const auto m = read_json(dir / "container.png.manifest.json");
    EXPECT_EQ(m.at("command"), "encode");
    EXPECT_EQ(m.at("settings").at("quant"), "quantize-8bit");

    const auto dec = run_cli({"decode", "--model", p("k2.ckpt"), "--container", p("container.png"), "--out-dir",
                              p("decoded")});
    ASSERT_EQ(dec.code, 0) << dec.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "decoded" / "secret_1.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "decoded" / "secret_2.png"));
    EXPECT_FALSE(std::filesystem::exists(dir / "decoded" / "secret_3.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "decoded" / "manifest.json"));
}

TEST_F(CliFixture, SecretCountMismatchIsRuntimeFailure) {
    const auto r = run_cli({"encode", "--model", p("k2.ckpt"), "--cover", p("cover.png"), "--secret", p("s1.png"),
                            "--out", p("container.png")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("2 secrets"), std::string::npos) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "container.png"));
}

TEST_F(CliFixture, MissingInputIsRuntimeFailure) {
    EXPECT_EQ(run_cli({"decode", "--model", p("k2.ckpt"), "--container", p("nope.png"), "--out-dir", p("d")}).code, 2);
    EXPECT_EQ(run_cli({"decode", "--model", p("nope.ckpt"), "--container", p("cover.png"), "--out-dir", p("d")}).code,
              2);
}

TEST_F(CliFixture, LsbRoundTrip) {
    ASSERT_EQ(run_cli({"lsb-encode", "--cover", p("cover.png"), "--secret", p("s1.png"), "--secret", p("s2.png"),
                       "--out", p("lsb.png")})
                  .code,
              0);
    ASSERT_EQ(run_cli({"lsb-decode", "--container", p("lsb.png"), "--k", "2", "--out-dir", p("lsb_out")}).code, 0);
    const auto s1 = load_image8(dir / "s1.png");
    const auto got = load_image8(dir / "lsb_out" / "secret_1.png");
    for (std::size_t i = 0; i < s1.bytes.size(); ++i) ASSERT_EQ(got.bytes[i] >> 6, s1.bytes[i] >> 6);
}

TEST(Cli, GradCheckPassesAndWritesManifest) {
    TempDir dir;
    const auto r = run_cli({"grad-check", "--k", "1", "--probes", "10", "--out-dir", dir.path().string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_EQ(read_json(dir / "manifest.json").at("probes").size(), 10u);
}

TEST(Cli, TrainPrecedenceAndOutputs) {
    TempDir dir;
    deepsteg::support::write_image_folder(dir / "data", 1, 4, 5);
    {
        std::ofstream cfg(dir / "train.cfg");
        cfg << "k = 1\nphase1_epochs = 5\nphase2_epochs = 0\nphase1_batch = 2\nseed = 3\nunrelated = 1\n";
    }
    ::setenv("DEEPSTEG_PHASE1_EPOCHS", "2", 1);
    ::setenv("DEEPSTEG_SEED", "9", 1);
    const auto r = run_cli({"train", "--config", (dir / "train.cfg").string(), "--data-root", (dir / "data").string(),
                            "--n-images", "4", "--seed", "4", "--out-dir", (dir / "run").string()});
    ::unsetenv("DEEPSTEG_PHASE1_EPOCHS");
    ::unsetenv("DEEPSTEG_SEED");
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("'unrelated'"), std::string::npos);

    const auto m = read_json(dir / "run" / "manifest.json");
    EXPECT_EQ(m.at("settings").at("phase1_epochs"), "2"); // environment beats config file
    EXPECT_EQ(m.at("settings").at("seed"), "4");          // flag beats environment
    EXPECT_EQ(m.at("settings").at("k"), "1");             // config file beats default
    EXPECT_EQ(m.at("epochs_completed"), 2);

    std::ifstream hist(dir / "run" / "history.csv");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line)) ++lines;
    EXPECT_EQ(lines, 3u);
    const auto ckpt = load_checkpoint(dir / "run" / "model.ckpt", 1);
    EXPECT_EQ(ckpt.epoch, 2u);
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "split.tsv"));

    // Evaluate the run on its own split.
    const auto e = run_cli({"evaluate", "--model", (dir / "run" / "model.ckpt").string(), "--split",
                            (dir / "run" / "split.tsv").string(), "--data-root", (dir / "data").string(),
                            "--samples", "2", "--out-dir", (dir / "eval").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(read_json(dir / "eval" / "eval.json").at("samples"), 2);
    EXPECT_TRUE(std::filesystem::exists(dir / "eval" / "eval.csv"));
}
