#pragma once

#include <filesystem>
#include <string>

#include "affect/config.hpp"
#include "affect/synth.hpp"

namespace affect::testing {

inline Dataset synth_split(const SynthSpec& spec, const std::string& split) {
    Dataset ds;
    ds.split = split;
    ds.dim = spec.dim();
    const std::size_t n = split == "train" ? spec.videos : spec.val_videos;
    for (std::size_t i = 0; i < n; ++i) {
        auto v = synth_video(spec, split, i);
        ds.videos.push_back({std::move(v.features), std::move(v.labels)});
    }
    return ds;
}

inline SynthSpec tiny_spec(std::uint64_t seed = 3) {
    SynthSpec s;
    s.videos = 2;
    s.val_videos = 1;
    s.frames = 24;
    s.stream_dims = {3, 3};
    s.segment_min = 4;
    s.segment_max = 8;
    s.seed = seed;
    return s;
}

inline RunConfig tiny_config() {
    RunConfig c;
    c.model.d_m = 8;
    c.model.num_heads = 2;
    c.model.d_ffn = 16;
    c.model.num_layers = 1;
    c.model.max_T = 8;
    c.train.win_len = 8;
    c.train.stride = 4;
    c.train.batch_size = 4;
    c.train.eval_batch_size = 3;
    c.train.adam.lr = 1e-3;
    c.train.epochs = 3;
    c.train.seed = 21;
    return c;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("affect_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace affect::testing
