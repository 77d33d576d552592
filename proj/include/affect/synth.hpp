#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "affect/data.hpp"

namespace affect {

struct SynthSpec {
    std::size_t videos = 8;        // training split
    std::size_t val_videos = 4;
    std::size_t frames = 128;      // per video
    std::vector<std::size_t> stream_dims{8, 8};
    std::size_t num_classes = 8;
    std::size_t segment_min = 16;  // frames per constant-class segment
    std::size_t segment_max = 48;
    double separation = 1.0;       // per-dimension std of the class centroids
    double noise = 0.3;            // per-frame feature noise std
    double smoothing = 0.7;        // AR(1) coefficient of the feature noise
    double va_noise = 0.05;
    double au_on = 0.9;            // P(bit) for units active in a class pattern
    double au_off = 0.05;
    double class_skew = 0.0;       // 0 uniform; larger favours class 0
    double unannotated = 0.0;      // fraction of frames with mask 0
    std::uint64_t seed = 0;

    std::size_t dim() const;
    // Throws ConfigError.
    void validate() const;
};

// `key=value` pairs separated by commas or newlines; `#` starts a comment.
// Unknown keys and malformed values are ConfigErrors.
SynthSpec parse_synth_spec(std::string_view text, SynthSpec base = {});

struct SynthVideo {
    FeatureSequence features;  // merged streams
    LabelSet labels;
};

// Class centroids, one row of dim() values per class.
std::vector<std::vector<double>> synth_centroids(const SynthSpec& spec);

// Deterministic in (spec, split, index).
SynthVideo synth_video(const SynthSpec& spec, const std::string& split, std::size_t index);

struct SynthSummary {
    std::size_t videos = 0;
    std::size_t frames = 0;
    std::array<std::size_t, kNumExpressions> class_histogram{};
};

// Writes <out>/<split>/<id>.s<k>.afsq, <id>.labels and <out>/<split>.manifest
// for the train and val splits.
SynthSummary synthesize_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace affect
