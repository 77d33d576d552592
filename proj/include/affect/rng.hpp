#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace affect {

// Mixes a seed with stream coordinates (epoch, step, ...) into a new seed,
// so every random stream in a run is addressable without carrying engine state.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

// Thin wrapper over mt19937_64. The real-valued draws are computed here rather
// than through <random> distributions, whose output is implementation-defined,
// so trajectories are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

}  // namespace affect
