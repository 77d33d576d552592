#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

inline constexpr std::size_t kNumExpressions = 8;
inline constexpr std::size_t kNumActionUnits = 12;

struct ModelConfig {
    std::size_t d_v = 0;  // merged input feature dim, fixed by the data
    std::size_t d_m = 128;
    std::size_t num_heads = 4;
    std::size_t d_k = 0;  // 0 means d_m / num_heads
    std::size_t d_ffn = 256;
    std::size_t num_layers = 2;
    std::size_t conv_kernel = 3;
    std::size_t max_T = 64;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;
    // Disabling is only useful for probing permutation behaviour.
    bool positional_encoding = true;

    std::size_t head_dim() const { return d_k != 0 ? d_k : (num_heads ? d_m / num_heads : 0); }

    // Throws ConfigError on any violated constraint.
    void validate() const;
};

struct AttentionProjections {
    Tensor w_q, w_k, w_v;  // d_m × d_m, column blocks of width d_k are the heads
    Tensor w_o;            // d_m × d_m
};

struct EncoderLayerParams {
    AttentionProjections attn;
    Tensor ln1_gamma, ln1_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gamma, ln2_beta;
};

struct ModelParams {
    Tensor conv_w, conv_b;
    std::vector<EncoderLayerParams> layers;
    Tensor va_w, va_b;
    Tensor expr_w, expr_b;
    Tensor au_w, au_b;

    // Stable, serialization-order listing. Entries alias the parameters.
    std::vector<std::pair<std::string, Tensor>> named() const;
};

struct TaskOutputs {
    Tensor va;           // T×2, tanh-bounded
    Tensor expr_logits;  // T×8
    Tensor au_logits;    // T×12
};

enum class Mode { train, infer };

// Xavier-uniform affine weights, zero biases, unit layer-norm gains.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Sinusoidal table, max_T × d_m. d_m must be even.
Tensor positional_encoding(std::size_t max_T, std::size_t d_m);

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Multi-head attention over the whole window.
Tensor tma_forward(const Tensor& x, const AttentionProjections& proj, std::size_t num_heads);

class Model {
public:
    Model(ModelConfig cfg, ModelParams params);

    const ModelConfig& config() const noexcept { return cfg_; }
    const ModelParams& params() const noexcept { return params_; }
    ModelParams& params() noexcept { return params_; }

    // x: T×d_v. Conv embedding plus positional encoding, T×d_m.
    Tensor embed_sequence(const Tensor& x) const;

    // Post-norm encoder block. dropout_rng may be null outside train mode.
    Tensor encoder_block(const Tensor& x, const EncoderLayerParams& layer, Mode mode, Rng* dropout_rng) const;

    // Embedding followed by every encoder block.
    Tensor encode(const Tensor& x, Mode mode, Rng* dropout_rng = nullptr) const;

    TaskOutputs forward(const Tensor& x, Mode mode, Rng* dropout_rng = nullptr) const;

private:
    ModelConfig cfg_;
    ModelParams params_;
    Tensor pe_;
};

}  // namespace affect
