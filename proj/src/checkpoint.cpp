#include "affect/checkpoint.hpp"

#include "affect/byte_io.hpp"
#include "affect/error.hpp"

namespace affect {

namespace {

constexpr std::string_view kMagic = "AFCK";
constexpr std::uint32_t kVersion = 1;

// Parameters are matched by name and order so a checkpoint can only be read
// back into the architecture its config describes.
ModelParams params_for(const ModelConfig& cfg) { return init_params(cfg, cfg.seed); }

}  // namespace

AdamState make_adam_state(const ModelParams& params, AdamConfig hyper) {
    AdamState s;
    s.hyper = hyper;
    for (const auto& [name, p] : params.named()) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    ByteWriter w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.string32(format_config(ck.config, false));
    const auto named = ck.params.named();
    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, p] : named) {
        w.string16(name);
        w.u32(static_cast<std::uint32_t>(p.rank()));
        for (auto e : p.shape()) w.u32(static_cast<std::uint32_t>(e));
        for (double x : p.data()) w.f64(x);
    }
    const auto& a = ck.adam;
    for (double h : {a.hyper.lr, a.hyper.beta1, a.hyper.beta2, a.hyper.eps}) w.f64(h);
    w.u64(a.step);
    if (a.m.size() != named.size() || a.v.size() != named.size()) {
        throw ContractError("optimizer state does not match the parameter list");
    }
    w.u32(static_cast<std::uint32_t>(a.m.size()));
    for (std::size_t i = 0; i < a.m.size(); ++i) {
        if (a.m[i].size() != named[i].second.numel() || a.v[i].size() != named[i].second.numel()) {
            throw ContractError("optimizer moments for " + named[i].first + " have the wrong size");
        }
        w.u32(static_cast<std::uint32_t>(a.m[i].size()));
        for (double x : a.m[i]) w.f64(x);
        for (double x : a.v[i]) w.f64(x);
    }
    w.u64(ck.rng_seed);
    w.u64(ck.epoch);
    w.u64(ck.best_epoch);
    w.f64(ck.best_score);
    w.string16(ck.metric);
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.bytes(std::min<std::size_t>(4, bytes.size()), "magic") != kMagic) {
        throw FormatError("not an AFCK checkpoint (bad magic)", 0);
    }
    if (const auto version = r.u32("version"); version != kVersion) {
        throw FormatError("unsupported AFCK version " + std::to_string(version), 4);
    }
    Checkpoint ck;
    const std::size_t config_at = r.offset();
    try {
        ck.config = parse_config_text(r.string32("config block"));
        ck.config.model.seed = ck.config.train.seed;
        ck.config.validate();
        ck.config.model.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid config block: ") + e.what(), config_at);
    }
    ck.params = params_for(ck.config.model);
    auto named = ck.params.named();
    const std::size_t count_at = r.offset();
    if (r.u32("parameter count") != named.size()) {
        throw FormatError("parameter count does not match the config's architecture", count_at);
    }
    for (auto& [name, p] : named) {
        const std::size_t at = r.offset();
        if (r.string16("parameter name") != name) throw FormatError("expected parameter " + name, at);
        const std::size_t shape_at = r.offset();
        const std::uint32_t rank = r.u32("parameter rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.u32("parameter extent"));
        if (shape != p.shape()) {
            throw FormatError("parameter " + name + " has shape " + shape_str(shape) + ", config implies " +
                                  shape_str(p.shape()),
                              shape_at);
        }
        auto data = p.mutable_data();
        for (auto& x : data) x = r.f64("parameter value");
    }
    auto& a = ck.adam;
    a.hyper.lr = r.f64("adam lr");
    a.hyper.beta1 = r.f64("adam beta1");
    a.hyper.beta2 = r.f64("adam beta2");
    a.hyper.eps = r.f64("adam eps");
    a.step = r.u64("adam step");
    const std::size_t moments_at = r.offset();
    if (r.u32("moment count") != named.size()) throw FormatError("optimizer block size mismatch", moments_at);
    for (const auto& [name, p] : named) {
        const std::size_t at = r.offset();
        const std::uint32_t n = r.u32("moment size");
        if (n != p.numel()) throw FormatError("optimizer moments for " + name + " have the wrong size", at);
        auto& m = a.m.emplace_back(n);
        auto& v = a.v.emplace_back(n);
        for (auto& x : m) x = r.f64("first moment");
        for (auto& x : v) x = r.f64("second moment");
    }
    ck.rng_seed = r.u64("rng seed");
    ck.epoch = r.u64("epoch");
    ck.best_epoch = r.u64("best epoch");
    ck.best_score = r.f64("best score");
    ck.metric = r.string16("metric name");
    if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw e.with_context(path.string());
    }
}

}  // namespace affect
