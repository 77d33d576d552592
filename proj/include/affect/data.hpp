#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "affect/model.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

// Expression class ids in label files.
enum class Expression : int { neutral, anger, disgust, fear, happiness, sadness, surprise, other };
const char* expression_name(int id);

enum class Task { va, expr, au };

// Per-frame backbone features for one video. Stored as float32 on disk.
struct FeatureSequence {
    std::string video_id;
    std::vector<std::uint64_t> frame_ids;
    std::size_t dim = 0;
    std::vector<double> features;  // length() × dim, row-major

    std::size_t length() const noexcept { return frame_ids.size(); }
    Tensor to_tensor() const;
    // Throws DataError on empty, non-increasing ids, shape or finiteness problems.
    void validate() const;
};

// AFSQ v1: "AFSQ", u32 version, u32 T, u32 d, u16 id length + id,
// T u64 frame ids, T×d float32. Little-endian.
std::vector<std::uint8_t> encode_feature_file(const FeatureSequence& seq);
FeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence read_feature_file(const std::filesystem::path& path);

// Feature-dimension concatenation of two streams for the same frames.
FeatureSequence merge_streams(const FeatureSequence& a, const FeatureSequence& b);

inline constexpr double kLabelSentinel = -5.0;

// Labels for every task of one video, as stored in a label file. Fields hold
// the raw file values, sentinel included, so files round-trip exactly; the
// *_valid accessors apply the frame mask and the sentinels.
struct LabelSet {
    std::vector<std::uint64_t> frame_ids;
    std::vector<double> va;      // T×2: valence, arousal
    std::vector<int> expr;       // T
    std::vector<int> au;         // T×12, 0/1 or sentinel
    std::vector<std::uint8_t> mask;

    std::size_t length() const noexcept { return frame_ids.size(); }
    bool va_valid(std::size_t t) const;
    bool expr_valid(std::size_t t) const;
    bool au_valid(std::size_t t) const;
    bool any_valid(std::size_t t) const { return va_valid(t) || expr_valid(t) || au_valid(t); }

    std::vector<std::uint8_t> task_mask(Task task) const;
    std::size_t count_valid(Task task) const;
    LabelSet slice(std::size_t start, std::size_t length) const;
    // Throws DataError when values are outside their domains.
    void validate() const;

    // Adds one frame; values of invalid tasks are written as sentinels.
    void push_frame(std::uint64_t frame_id, const double* va_pair, int expr_id, const int* au_bits, bool valid);
};

// "#affectlabels v1" header, then `frame_id,valence,arousal,expr,au0..au11,mask` per line.
std::string format_label_file(const LabelSet& labels);
LabelSet parse_label_file(std::string_view text);
void write_label_file(const std::filesystem::path& path, const LabelSet& labels);
LabelSet read_label_file(const std::filesystem::path& path);

struct VideoRecord {
    std::string video_id;
    std::vector<std::filesystem::path> feature_paths;  // one per stream
    std::filesystem::path label_path;
};

struct DatasetManifest {
    std::string split;
    std::vector<std::size_t> stream_dims;
    std::vector<VideoRecord> records;
};

// "#affectmanifest v1 split=<name> dims=<d1[,d2]>" header, then
// `video_id<TAB>featA[<TAB>featB]<TAB>labels` per line. Relative paths are
// resolved against the manifest's directory when read.
std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct Video {
    FeatureSequence features;  // streams already merged
    LabelSet labels;
};

struct Dataset {
    std::string split;
    std::size_t dim = 0;
    std::vector<Video> videos;

    std::size_t count_valid(Task task) const;
};

// Reads, validates and merges every record. Labels must cover exactly the
// feature frames.
Dataset load_dataset(const DatasetManifest& manifest);

struct WindowSpan {
    std::size_t video = 0;
    std::size_t start = 0;
    std::size_t length = 0;
};

// Windows at offsets 0, stride, 2*stride, ... that fit entirely, plus one
// shorter tail window when frames past the last full window would otherwise
// be dropped. With labels, the tail is kept only if it has a valid frame.
std::vector<WindowSpan> make_windows(std::size_t num_frames, const LabelSet* labels, std::size_t win_len,
                                     std::size_t stride, std::size_t video_index = 0);

// Owned slice of one video.
struct Window {
    std::string video_id;
    std::size_t video = 0;
    std::size_t start = 0;
    std::vector<std::uint64_t> frame_ids;
    std::size_t dim = 0;
    std::vector<double> features;
    LabelSet labels;

    std::size_t length() const noexcept { return frame_ids.size(); }
    Tensor to_tensor() const;
};

Window materialize(const Dataset& data, const WindowSpan& span);

// Majority valid expression label, ties to the smallest id; -1 if none.
int window_class(const LabelSet& labels);

// Infinite stream of window indices where every sampling class present is
// drawn with equal probability, then a window uniformly within the class.
// Windows without a valid expression label form one extra class.
class BalancedSampler {
public:
    BalancedSampler(std::span<const int> window_classes, std::uint64_t seed);
    std::size_t next();
    std::size_t num_buckets() const noexcept { return buckets_.size(); }

private:
    std::vector<std::vector<std::size_t>> buckets_;
    Rng rng_;
};

// Each window once per pass, in a seeded random order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

struct AugmentPolicy {
    double noise_prob = 0.0;
    double noise_sigma = 0.1;
    double crop_prob = 0.0;
    double crop_min_fraction = 0.5;
    double frame_dropout_prob = 0.0;
    double frame_dropout_max_fraction = 0.1;

    void validate() const;
};

// Random temporal crop, then frame dropout (frames replaced by the window
// mean feature), then Gaussian noise. Labels follow the kept frames and are
// never modified.
Window augment_window(const Window& w, const AugmentPolicy& policy, Rng& rng);

}  // namespace affect
