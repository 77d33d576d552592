#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "affect/byte_io.hpp"
#include "affect/cli.hpp"
#include "affect/data.hpp"
#include "fixtures.hpp"

using namespace affect;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

const char* kTinySpec = "videos=3,val_videos=2,frames=24,dims=3:3,segment_min=4,segment_max=8";

const char* kTinyConfig =
    "[model]\nd_m = 8\nnum_heads = 2\nd_ffn = 16\nnum_layers = 1\nmax_T = 8\n"
    "[train]\nwin_len = 8\nstride = 4\nbatch_size = 4\nlr = 0.001\n";

// Shared synthetic data and a trained run, built once.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = affect::testing::fresh_dir("cli");
        fs::create_directories(root_);
        write_file_text(root_ / "tiny.cfg", kTinyConfig);
        ASSERT_EQ(run({"synth", "--spec", kTinySpec, "--out", (root_ / "data").string(), "--seed", "4"}).code, 0);
        const auto r = train_run("run", {"--epochs", "2"});
        ASSERT_EQ(r.code, 0) << r.err;
    }

    static Result train_run(const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> args{"train", "--config", (root_ / "tiny.cfg").string(), "--train-manifest",
                                      (root_ / "data/train.manifest").string(), "--val-manifest",
                                      (root_ / "data/val.manifest").string(), "--out", (root_ / out).string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    }

    static std::string value_of(const std::string& text, const std::string& key) {
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) {
            if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
        }
        return {};
    }

    static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, SynthWritesManifestsAndSummary) {
    EXPECT_TRUE(fs::exists(root_ / "data/train.manifest"));
    EXPECT_TRUE(fs::exists(root_ / "data/val.manifest"));
    const auto r = run({"synth", "--spec", kTinySpec, "--out", (root_ / "data2").string(), "--seed", "4"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(value_of(r.out, "videos"), "5");
    EXPECT_EQ(value_of(r.out, "frames"), "120");
}

TEST_F(CliTest, SynthIsByteIdenticalForSameSeed) {
    const auto a = root_ / "same_a", b = root_ / "same_b";
    ASSERT_EQ(run({"synth", "--spec", kTinySpec, "--out", a.string(), "--seed", "9"}).code, 0);
    ASSERT_EQ(run({"synth", "--spec", kTinySpec, "--out", b.string(), "--seed", "9"}).code, 0);
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) {
            EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b / fs::relative(e.path(), a)));
        }
    }
}

TEST_F(CliTest, SynthSeedFromEnvironmentUnlessFlagGiven) {
    const auto a = root_ / "env_a", b = root_ / "env_b", c = root_ / "env_c";
    ::setenv("AFFECT_SEED", "9", 1);
    const int code = run({"synth", "--spec", kTinySpec, "--out", a.string()}).code;
    const int code_flag = run({"synth", "--spec", kTinySpec, "--out", c.string(), "--seed", "4"}).code;
    ::unsetenv("AFFECT_SEED");
    ASSERT_EQ(code, 0);
    ASSERT_EQ(code_flag, 0);
    ASSERT_EQ(run({"synth", "--spec", kTinySpec, "--out", b.string(), "--seed", "9"}).code, 0);
    EXPECT_EQ(read_file_bytes(a / "train/train_000.s0.afsq"), read_file_bytes(b / "train/train_000.s0.afsq"));
    EXPECT_EQ(read_file_bytes(c / "train/train_000.s0.afsq"), read_file_bytes(root_ / "data/train/train_000.s0.afsq"));
}

TEST_F(CliTest, SynthBadSpecAndUnwritableDir) {
    EXPECT_EQ(run({"synth", "--spec", "frames=zero", "--out", (root_ / "bad").string()}).code, kExitUsage);
    const auto r = run({"synth", "--out", "/proc/affect_nope"});
    EXPECT_EQ(r.code, kExitIo);
    EXPECT_NE(r.err.find("/proc/affect_nope"), std::string::npos);
}

TEST_F(CliTest, TrainWritesOneLogLinePerEpoch) {
    const auto log = read_file_text(root_ / "run/train.log");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
    EXPECT_EQ(log.rfind("epoch=1 ", 0), 0u);
    EXPECT_NE(log.find("\nepoch=2 "), std::string::npos);
    EXPECT_TRUE(fs::exists(root_ / "run/best.afck"));
    EXPECT_NE(read_file_text(root_ / "run/config.txt").find("model.d_m = 8"), std::string::npos);
}

TEST_F(CliTest, TrainIsDeterministic) {
    ASSERT_EQ(train_run("run_again", {"--epochs", "2"}).code, 0);
    for (const char* f : {"best.afck", "last.afck", "train.log"}) {
        EXPECT_EQ(read_file_bytes(root_ / "run" / f), read_file_bytes(root_ / "run_again" / f)) << f;
    }
}

TEST_F(CliTest, TrainUsageErrors) {
    auto r = run({"train", "--train-manifest", (root_ / "missing.manifest").string(), "--val-manifest",
                  (root_ / "data/val.manifest").string(), "--out", (root_ / "x").string()});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_EQ(train_run("bad_task", {"--task", "pose"}).code, kExitUsage);
    EXPECT_EQ(train_run("bad_set", {"--set", "train.nope=1"}).code, kExitUsage);
    EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(run({}).code, kExitUsage);
}

TEST_F(CliTest, TrainTaskLabelMismatch) {
    const auto dir = root_ / "unlabeled";
    ASSERT_EQ(run({"synth", "--spec", std::string(kTinySpec) + ",unannotated=1", "--out", dir.string()}).code, 0);
    const auto r = run({"train", "--config", (root_ / "tiny.cfg").string(), "--train-manifest",
                        (dir / "train.manifest").string(), "--val-manifest", (dir / "val.manifest").string(),
                        "--task", "expr", "--epochs", "1", "--out", (root_ / "unlabeled_run").string()});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("task/label mismatch"), std::string::npos);
}

TEST_F(CliTest, TrainNonFiniteAbortExitsFour) {
    const auto r = train_run("diverge", {"--epochs", "3", "--set", "train.lr=1e300"});
    EXPECT_EQ(r.code, kExitNumeric) << r.err;
    EXPECT_NE(r.err.find("non-finite"), std::string::npos);
}

TEST_F(CliTest, EvalScoreMatchesTrainingLog) {
    const auto r = run({"eval", "--checkpoint", (root_ / "run/best.afck").string(), "--manifest",
                        (root_ / "data/val.manifest").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(value_of(r.out, "expr_macro_f1").empty());
    const double score = std::stod(value_of(r.out, "score"));
    const auto log = read_file_text(root_ / "run/train.log");
    double best = -1;
    for (std::size_t pos = 0; (pos = log.find(" score=", pos)) != std::string::npos; ++pos) {
        best = std::max(best, std::stod(log.substr(pos + 7)));
    }
    EXPECT_NEAR(score, best, 1e-9);
}

TEST_F(CliTest, EvalErrors) {
    auto bytes = read_file_bytes(root_ / "run/best.afck");
    bytes[0] = 'Z';
    write_file_bytes(root_ / "corrupt.afck", bytes);
    auto r = run({"eval", "--checkpoint", (root_ / "corrupt.afck").string(), "--manifest",
                  (root_ / "data/val.manifest").string()});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("byte offset 0"), std::string::npos);

    write_file_text(root_ / "empty.manifest", "#affectmanifest v1 split=val dims=3,3\n");
    r = run({"eval", "--checkpoint", (root_ / "run/best.afck").string(), "--manifest", (root_ / "empty.manifest").string()});
    EXPECT_EQ(r.code, kExitUsage);

    const auto wide = root_ / "wide";
    ASSERT_EQ(run({"synth", "--spec", "videos=1,val_videos=1,frames=8,dims=5", "--out", wide.string()}).code, 0);
    r = run({"eval", "--checkpoint", (root_ / "run/best.afck").string(), "--manifest", (wide / "val.manifest").string()});
    EXPECT_EQ(r.code, kExitUsage);
}

TEST_F(CliTest, PredictRoundTripsAndIsDeterministic) {
    const auto a = (root_ / "data/val/val_000.s0.afsq").string(), b = (root_ / "data/val/val_000.s1.afsq").string();
    const auto out1 = root_ / "pred1.labels", out2 = root_ / "pred2.labels";
    const auto ck = (root_ / "run/best.afck").string();
    ASSERT_EQ(run({"predict", "--checkpoint", ck, "--features", a + "," + b, "--out", out1.string()}).code, 0);
    ASSERT_EQ(run({"predict", "--checkpoint", ck, "--features", a + "," + b, "--out", out2.string()}).code, 0);
    EXPECT_EQ(read_file_bytes(out1), read_file_bytes(out2));
    const LabelSet labels = read_label_file(out1);
    EXPECT_EQ(labels.length(), 24u);
    EXPECT_EQ(labels.count_valid(Task::expr), 24u);
    EXPECT_EQ(labels.count_valid(Task::va), 24u);
    EXPECT_EQ(labels.count_valid(Task::au), 24u);
    // One stream alone has half the dims the checkpoint expects.
    EXPECT_EQ(run({"predict", "--checkpoint", ck, "--features", a, "--out", (root_ / "p3").string()}).code, kExitUsage);
}

TEST_F(CliTest, InspectKnownFormats) {
    auto r = run({"inspect", "--file", (root_ / "data/train/train_000.s0.afsq").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(value_of(r.out, "format"), "AFSQ");
    EXPECT_EQ(value_of(r.out, "frames"), "24");
    EXPECT_EQ(value_of(r.out, "dim"), "3");
    EXPECT_EQ(value_of(r.out, "video_id"), "train_000");

    r = run({"inspect", "--file", (root_ / "run/best.afck").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(value_of(r.out, "format"), "AFCK");
    EXPECT_EQ(value_of(r.out, "param.embed.conv.weight"), "3x6x8");
    EXPECT_EQ(value_of(r.out, "config.model.d_v"), "6");

    r = run({"inspect", "--file", (root_ / "data/train/train_000.labels").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(value_of(r.out, "format"), "labels");
    EXPECT_EQ(value_of(r.out, "frames"), "24");
    EXPECT_FALSE(value_of(r.out, "class.Neutral").empty());

    r = run({"inspect", "--file", (root_ / "tiny.cfg").string()});
    EXPECT_EQ(r.code, kExitUsage);
}
