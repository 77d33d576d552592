#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "affect/config.hpp"
#include "affect/model.hpp"

namespace affect {

struct AdamState {
    AdamConfig hyper;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;  // one per parameter, in ModelParams::named() order
    std::vector<std::vector<double>> v;
};

// Zero moments shaped like params.
AdamState make_adam_state(const ModelParams& params, AdamConfig hyper);

struct Checkpoint {
    RunConfig config;  // model.d_v filled in
    ModelParams params;
    AdamState adam;
    std::uint64_t epoch = 0;  // completed training epochs
    std::string metric;       // tracked validation metric
    double best_score = 0.0;
    std::uint64_t best_epoch = 0;
    // Every random stream is derived from (seed, epoch, position), so the
    // seed and epoch are the whole RNG state.
    std::uint64_t rng_seed = 0;
};

// AFCK v1, little-endian:
//   "AFCK", u32 version
//   u32 length + config text (format_config without run settings)
//   u32 count, then per parameter: u16 name, u32 rank, u32 extents, f64 payload
//   optimizer: f64 lr, beta1, beta2, eps; u64 step; u32 count, then per
//     parameter u32 size + f64 m values + f64 v values
//   state: u64 rng seed, u64 epoch, u64 best epoch, f64 best score, u16 metric
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
// Throws FormatError with the offending byte offset.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace affect
