#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "affect/data.hpp"
#include "affect/model.hpp"

namespace affect {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class TrainTask { va, expr, au, multi };
TrainTask parse_task(std::string_view name);
const char* task_name(TrainTask task);

struct TrainConfig {
    TrainTask task = TrainTask::expr;
    AdamConfig adam;
    std::size_t batch_size = 32;
    std::size_t eval_batch_size = 16;
    std::size_t win_len = 64;
    std::size_t stride = 32;
    std::size_t epochs = 30;
    std::string sampler = "auto";  // auto, balanced, shuffle
    bool class_weighting = true;
    bool au_pos_weighting = true;
    std::size_t threads = 1;       // evaluation workers
    std::uint64_t seed = 0;
    AugmentPolicy augment;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    // Throws ConfigError.
    void validate() const;
};

// Sets one `section.key` entry. Throws ConfigError for unknown keys or
// malformed values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

// `section.key = value` lines, or `key = value` under a `[section]` header.
// `#` starts a comment. Later entries win.
RunConfig parse_config_text(std::string_view text, RunConfig base = {});

// Every key with its value, sorted by key, one `key = value` per line.
// Reals use the shortest round-trip form, so parsing the output restores the
// exact config. Keys that do not affect the trajectory (train.epochs,
// train.threads) are left out when with_run_settings is false, so a run and
// its resumed extension store the same config.
std::string format_config(const RunConfig& cfg, bool with_run_settings = true);

}  // namespace affect
