#include <filesystem>

#include <gtest/gtest.h>

#include "affect/byte_io.hpp"
#include "affect/error.hpp"
#include "affect/synth.hpp"

using namespace affect;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("affect_synth_" + name);
    fs::remove_all(dir);
    return dir;
}

SynthSpec small_spec() {
    SynthSpec s;
    s.videos = 3;
    s.val_videos = 2;
    s.frames = 40;
    s.stream_dims = {4, 3};
    s.seed = 5;
    return s;
}

}  // namespace

TEST(SynthSpec, ParsesOverrides) {
    auto s = parse_synth_spec("videos=2, frames=10\ndims=5:6 # comment\nseparation=2.5");
    EXPECT_EQ(s.videos, 2u);
    EXPECT_EQ(s.frames, 10u);
    EXPECT_EQ(s.stream_dims, (std::vector<std::size_t>{5, 6}));
    EXPECT_EQ(s.dim(), 11u);
    EXPECT_DOUBLE_EQ(s.separation, 2.5);
}

TEST(SynthSpec, RejectsBadInput) {
    EXPECT_THROW(parse_synth_spec("bogus=1"), ConfigError);
    EXPECT_THROW(parse_synth_spec("frames=abc"), ConfigError);
    EXPECT_THROW(parse_synth_spec("classes=9"), ConfigError);
    EXPECT_THROW(parse_synth_spec("segment_min=10,segment_max=5"), ConfigError);
}

TEST(Synth, SameSeedGivesByteIdenticalFiles) {
    auto a = fresh_dir("a"), b = fresh_dir("b");
    synthesize_dataset(small_spec(), a);
    synthesize_dataset(small_spec(), b);
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        EXPECT_EQ(read_file_bytes(entry.path()), read_file_bytes(b / rel)) << rel;
        ++files;
    }
    // 5 videos × (2 streams + labels) + 2 manifests
    EXPECT_EQ(files, 17u);
}

TEST(Synth, DifferentSeedsDiffer) {
    auto s = small_spec();
    auto v1 = synth_video(s, "train", 0);
    s.seed = 6;
    auto v2 = synth_video(s, "train", 0);
    EXPECT_NE(v1.features.features, v2.features.features);
}

TEST(Synth, GeneratedDatasetLoads) {
    auto dir = fresh_dir("load");
    auto summary = synthesize_dataset(small_spec(), dir);
    EXPECT_EQ(summary.videos, 5u);
    EXPECT_EQ(summary.frames, 200u);
    Dataset ds = load_dataset(read_manifest(dir / "train.manifest"));
    EXPECT_EQ(ds.dim, 7u);
    EXPECT_EQ(ds.videos.size(), 3u);
    auto direct = synth_video(small_spec(), "train", 1);
    EXPECT_EQ(ds.videos[1].features.features, direct.features.features);
}

TEST(Synth, VaWithinRange) {
    auto s = small_spec();
    s.va_noise = 2.0;
    auto v = synth_video(s, "train", 0);
    for (double x : v.labels.va) {
        EXPECT_GE(x, -1.0);
        EXPECT_LE(x, 1.0);
    }
}

TEST(Synth, AllClassesPresentInTrainingSplit) {
    SynthSpec s;
    std::vector<int> seen(kNumExpressions, 0);
    for (std::size_t i = 0; i < s.videos; ++i)
        for (int c : synth_video(s, "train", i).labels.expr) seen[static_cast<std::size_t>(c)] = 1;
    for (int x : seen) EXPECT_EQ(x, 1);
}

TEST(Synth, UnannotatedFramesAreMasked) {
    auto s = small_spec();
    s.unannotated = 0.5;
    auto v = synth_video(s, "train", 0);
    const auto valid = v.labels.count_valid(Task::expr);
    EXPECT_GT(valid, 5u);
    EXPECT_LT(valid, 35u);
}

TEST(Synth, NearestCentroidSeparatesClasses) {
    SynthSpec s;
    s.seed = 17;
    // Centroids estimated from training videos, accuracy measured on val.
    const std::size_t d = s.dim();
    std::vector<std::vector<double>> mean(kNumExpressions, std::vector<double>(d, 0.0));
    std::vector<double> count(kNumExpressions, 0.0);
    for (std::size_t i = 0; i < s.videos; ++i) {
        auto v = synth_video(s, "train", i);
        for (std::size_t t = 0; t < v.labels.length(); ++t) {
            const auto c = static_cast<std::size_t>(v.labels.expr[t]);
            for (std::size_t j = 0; j < d; ++j) mean[c][j] += v.features.features[t * d + j];
            count[c] += 1.0;
        }
    }
    for (std::size_t c = 0; c < kNumExpressions; ++c) {
        ASSERT_GT(count[c], 0.0);
        for (auto& x : mean[c]) x /= count[c];
    }
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < s.val_videos; ++i) {
        auto v = synth_video(s, "val", i);
        for (std::size_t t = 0; t < v.labels.length(); ++t) {
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t c = 0; c < kNumExpressions; ++c) {
                double dist = 0.0;
                for (std::size_t j = 0; j < d; ++j) dist += std::pow(v.features.features[t * d + j] - mean[c][j], 2);
                if (dist < best_d) best_d = dist, best = c;
            }
            hits += static_cast<int>(best) == v.labels.expr[t];
            ++total;
        }
    }
    EXPECT_GT(static_cast<double>(hits) / static_cast<double>(total), 0.9);
}

TEST(Synth, UnwritableDirectoryIsIoError) {
    EXPECT_THROW(synthesize_dataset(small_spec(), "/proc/affect_no_write"), IoError);
}
