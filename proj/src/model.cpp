#include "affect/model.hpp"

#include <cmath>

#include "affect/error.hpp"
#include "affect/rng.hpp"

namespace affect {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (d_v == 0) fail("d_v must be positive");
    if (d_m == 0 || d_ffn == 0) fail("d_m and d_ffn must be positive");
    if (num_heads == 0) fail("num_heads must be positive");
    if (d_k == 0 && d_m % num_heads != 0) {
        fail("d_m=" + std::to_string(d_m) + " is not divisible by num_heads=" + std::to_string(num_heads));
    }
    if (num_heads * head_dim() != d_m) {
        fail("d_m=" + std::to_string(d_m) + " != num_heads*d_k=" + std::to_string(num_heads * head_dim()));
    }
    if (conv_kernel % 2 == 0) fail("conv_kernel must be odd, got " + std::to_string(conv_kernel));
    if (max_T == 0) fail("max_T must be at least 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
    if (positional_encoding && d_m % 2 != 0) fail("d_m must be even for positional encoding");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out{{"embed.conv.weight", conv_w}, {"embed.conv.bias", conv_b}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = "encoder." + std::to_string(i) + ".";
        out.insert(out.end(), {{p + "attn.w_q", l.attn.w_q},
                               {p + "attn.w_k", l.attn.w_k},
                               {p + "attn.w_v", l.attn.w_v},
                               {p + "attn.w_o", l.attn.w_o},
                               {p + "norm1.gamma", l.ln1_gamma},
                               {p + "norm1.beta", l.ln1_beta},
                               {p + "ffn.w1", l.ffn_w1},
                               {p + "ffn.b1", l.ffn_b1},
                               {p + "ffn.w2", l.ffn_w2},
                               {p + "ffn.b2", l.ffn_b2},
                               {p + "norm2.gamma", l.ln2_gamma},
                               {p + "norm2.beta", l.ln2_beta}});
    }
    out.insert(out.end(), {{"head.va.weight", va_w},
                           {"head.va.bias", va_b},
                           {"head.expr.weight", expr_w},
                           {"head.expr.bias", expr_b},
                           {"head.au.weight", au_w},
                           {"head.au.bias", au_b}});
    return out;
}

namespace {

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::filled({n}, 1.0, true); }

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, {0x1417}));
    const std::size_t dm = cfg.d_m;
    ModelParams p;
    p.conv_w = xavier({cfg.conv_kernel, cfg.d_v, dm}, cfg.conv_kernel * cfg.d_v, cfg.conv_kernel * dm, rng);
    p.conv_b = zeros_param(dm);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        EncoderLayerParams l;
        l.attn.w_q = xavier({dm, dm}, dm, dm, rng);
        l.attn.w_k = xavier({dm, dm}, dm, dm, rng);
        l.attn.w_v = xavier({dm, dm}, dm, dm, rng);
        l.attn.w_o = xavier({dm, dm}, dm, dm, rng);
        l.ln1_gamma = ones_param(dm);
        l.ln1_beta = zeros_param(dm);
        l.ffn_w1 = xavier({dm, cfg.d_ffn}, dm, cfg.d_ffn, rng);
        l.ffn_b1 = zeros_param(cfg.d_ffn);
        l.ffn_w2 = xavier({cfg.d_ffn, dm}, cfg.d_ffn, dm, rng);
        l.ffn_b2 = zeros_param(dm);
        l.ln2_gamma = ones_param(dm);
        l.ln2_beta = zeros_param(dm);
        p.layers.push_back(std::move(l));
    }
    p.va_w = xavier({dm, 2}, dm, 2, rng);
    p.va_b = zeros_param(2);
    p.expr_w = xavier({dm, kNumExpressions}, dm, kNumExpressions, rng);
    p.expr_b = zeros_param(kNumExpressions);
    p.au_w = xavier({dm, kNumActionUnits}, dm, kNumActionUnits, rng);
    p.au_b = zeros_param(kNumActionUnits);
    return p;
}

Tensor positional_encoding(std::size_t max_T, std::size_t d_m) {
    if (d_m == 0 || d_m % 2 != 0) {
        throw ConfigError("positional encoding needs an even d_m, got " + std::to_string(d_m));
    }
    std::vector<double> pe(max_T * d_m);
    for (std::size_t t = 0; t < max_T; ++t) {
        for (std::size_t i = 0; i < d_m / 2; ++i) {
            const double angle =
                static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_m));
            pe[t * d_m + 2 * i] = std::sin(angle);
            pe[t * d_m + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor::from({max_T, d_m}, std::move(pe));
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("scaled_dot_attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                             ", V " + shape_str(v.shape()) + " must share one T×d_k shape");
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Tensor weights = softmax_lastdim(scale(matmul(q, transpose(k)), inv_sqrt));
    return matmul(weights, v);
}

Tensor tma_forward(const Tensor& x, const AttentionProjections& proj, std::size_t num_heads) {
    if (x.rank() != 2) throw DimensionError("tma_forward: expected T×d_m input, got " + shape_str(x.shape()));
    const std::size_t dm = x.dim(1);
    if (num_heads == 0 || dm % num_heads != 0) {
        throw ConfigError("tma_forward: d_m=" + std::to_string(dm) + " not divisible into " +
                          std::to_string(num_heads) + " heads");
    }
    const std::size_t dk = dm / num_heads;
    Tensor q = matmul(x, proj.w_q);
    Tensor k = matmul(x, proj.w_k);
    Tensor v = matmul(x, proj.w_v);
    std::vector<Tensor> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        heads.push_back(scaled_dot_attention(slice_lastdim(q, h * dk, dk), slice_lastdim(k, h * dk, dk),
                                             slice_lastdim(v, h * dk, dk)));
    }
    Tensor merged = num_heads == 1 ? heads.front() : concat_lastdim(heads);
    return matmul(merged, proj.w_o);
}

Model::Model(ModelConfig cfg, ModelParams params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    if (params_.layers.size() != cfg_.num_layers) {
        throw ConfigError("model params have " + std::to_string(params_.layers.size()) + " layers, config says " +
                          std::to_string(cfg_.num_layers));
    }
    if (cfg_.positional_encoding) pe_ = positional_encoding(cfg_.max_T, cfg_.d_m);
}

Tensor Model::embed_sequence(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.d_v) {
        throw DimensionError("embed_sequence: expected T×" + std::to_string(cfg_.d_v) + " features, got " +
                             shape_str(x.shape()));
    }
    const std::size_t T = x.dim(0);
    if (T > cfg_.max_T) {
        throw WindowError("window of " + std::to_string(T) + " frames exceeds max_T=" + std::to_string(cfg_.max_T));
    }
    Tensor h = conv1d_temporal(x, params_.conv_w, params_.conv_b);
    if (!cfg_.positional_encoding) return h;
    return add(h, T == cfg_.max_T ? pe_ : slice_time(pe_, 0, T));
}

Tensor Model::encoder_block(const Tensor& x, const EncoderLayerParams& layer, Mode mode, Rng* dropout_rng) const {
    const bool drop = mode == Mode::train && cfg_.dropout_rate > 0.0;
    if (drop && dropout_rng == nullptr) throw ContractError("train-mode dropout needs a random stream");
    auto maybe_drop = [&](const Tensor& t) { return drop ? dropout(t, cfg_.dropout_rate, *dropout_rng) : t; };

    Tensor attn = tma_forward(x, layer.attn, cfg_.num_heads);
    Tensor y = layer_norm_lastdim(add(x, maybe_drop(attn)), layer.ln1_gamma, layer.ln1_beta);
    Tensor hidden = relu(add_bias(matmul(y, layer.ffn_w1), layer.ffn_b1));
    Tensor ffn = add_bias(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
    return layer_norm_lastdim(add(y, maybe_drop(ffn)), layer.ln2_gamma, layer.ln2_beta);
}

Tensor Model::encode(const Tensor& x, Mode mode, Rng* dropout_rng) const {
    Tensor h = embed_sequence(x);
    for (const auto& layer : params_.layers) h = encoder_block(h, layer, mode, dropout_rng);
    return h;
}

TaskOutputs Model::forward(const Tensor& x, Mode mode, Rng* dropout_rng) const {
    Tensor h = encode(x, mode, dropout_rng);
    TaskOutputs out;
    out.va = tanh_elem(add_bias(matmul(h, params_.va_w), params_.va_b));
    out.expr_logits = add_bias(matmul(h, params_.expr_w), params_.expr_b);
    out.au_logits = add_bias(matmul(h, params_.au_w), params_.au_b);
    return out;
}

}  // namespace affect
