#include "affect/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <system_error>

#include "affect/error.hpp"
#include "affect/rng.hpp"

namespace affect {

namespace {

// Valence/arousal anchors on the affect circumplex, by expression id.
constexpr double kVaAnchors[kNumExpressions][2] = {
    {0.0, 0.0},    {-0.6, 0.7},  {-0.7, 0.3},  {-0.5, 0.8},
    {0.8, 0.4},    {-0.7, -0.5}, {0.3, 0.85},  {0.2, -0.6},
};

constexpr std::uint64_t kCentroidStream = 0xC3;
constexpr std::uint64_t kAuPatternStream = 0xA0;

std::uint64_t split_code(const std::string& split) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : split) h = (h ^ c) * 1099511628211ull;
    return h;
}

std::string video_name(const std::string& split, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu", split.c_str(), index);
    return buf;
}

std::vector<std::vector<int>> au_patterns(const SynthSpec& spec) {
    Rng rng(derive_seed(spec.seed, {kAuPatternStream}));
    std::vector<std::vector<int>> out(spec.num_classes, std::vector<int>(kNumActionUnits, 0));
    for (auto& p : out) {
        for (auto& bit : p) bit = rng.bernoulli(0.3);
        p[rng.below(kNumActionUnits)] = 1;
    }
    return out;
}

int draw_class(const SynthSpec& spec, Rng& rng) {
    if (spec.class_skew <= 0.0) return static_cast<int>(rng.below(spec.num_classes));
    std::vector<double> w(spec.num_classes);
    double total = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) total += w[c] = std::exp(-spec.class_skew * static_cast<double>(c));
    double u = rng.uniform() * total;
    for (std::size_t c = 0; c < w.size(); ++c) {
        if ((u -= w[c]) < 0.0) return static_cast<int>(c);
    }
    return static_cast<int>(w.size() - 1);
}

}  // namespace

std::size_t SynthSpec::dim() const {
    std::size_t d = 0;
    for (auto s : stream_dims) d += s;
    return d;
}

void SynthSpec::validate() const {
    if (videos == 0) throw ConfigError("synth: videos must be at least 1");
    if (frames == 0) throw ConfigError("synth: frames must be at least 1");
    if (stream_dims.empty() || stream_dims.size() > 2) throw ConfigError("synth: one or two streams required");
    for (auto d : stream_dims)
        if (d == 0) throw ConfigError("synth: stream dims must be positive");
    if (num_classes < 1 || num_classes > kNumExpressions) throw ConfigError("synth: classes must be in 1..8");
    if (segment_min == 0 || segment_max < segment_min) throw ConfigError("synth: need 1 <= segment_min <= segment_max");
    if (!(separation > 0.0) || !(noise >= 0.0) || !(va_noise >= 0.0)) {
        throw ConfigError("synth: separation must be positive, noise levels non-negative");
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("synth: smoothing must be in [0, 1)");
    for (double p : {au_on, au_off, unannotated}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probabilities must be in [0, 1]");
    }
    if (!(class_skew >= 0.0)) throw ConfigError("synth: class_skew must be non-negative");
}

SynthSpec parse_synth_spec(std::string_view text, SynthSpec spec) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find_first_of(",\n", pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view item = text.substr(pos, end - pos);
        pos = end + 1;
        if (auto hash = item.find('#'); hash != std::string_view::npos) item = item.substr(0, hash);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw ConfigError("synth spec: expected key=value, got '" + std::string(item) + "'");
        std::string_view key = item.substr(0, eq), value = item.substr(eq + 1);
        while (!key.empty() && key.back() == ' ') key.remove_suffix(1);
        while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
        auto bad = [&] { return ConfigError("synth spec: bad value '" + std::string(value) + "' for " + std::string(key)); };
        auto as_size = [&] {
            std::size_t v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || p != value.data() + value.size()) throw bad();
            return v;
        };
        auto as_real = [&] {
            double v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || p != value.data() + value.size() || !std::isfinite(v)) throw bad();
            return v;
        };
        if (key == "videos") spec.videos = as_size();
        else if (key == "val_videos") spec.val_videos = as_size();
        else if (key == "frames") spec.frames = as_size();
        else if (key == "classes") spec.num_classes = as_size();
        else if (key == "segment_min") spec.segment_min = as_size();
        else if (key == "segment_max") spec.segment_max = as_size();
        else if (key == "separation") spec.separation = as_real();
        else if (key == "noise") spec.noise = as_real();
        else if (key == "smoothing") spec.smoothing = as_real();
        else if (key == "va_noise") spec.va_noise = as_real();
        else if (key == "au_on") spec.au_on = as_real();
        else if (key == "au_off") spec.au_off = as_real();
        else if (key == "class_skew") spec.class_skew = as_real();
        else if (key == "unannotated") spec.unannotated = as_real();
        else if (key == "seed") spec.seed = as_size();
        else if (key == "dims") {
            spec.stream_dims.clear();
            std::size_t s = 0;
            while (s <= value.size()) {
                const std::size_t c = std::min(value.find(':', s), value.size());
                std::size_t d = 0;
                auto [p, ec] = std::from_chars(value.data() + s, value.data() + c, d);
                if (ec != std::errc() || p != value.data() + c) throw bad();
                spec.stream_dims.push_back(d);
                s = c + 1;
            }
        } else {
            throw ConfigError("synth spec: unknown key '" + std::string(key) + "'");
        }
    }
    spec.validate();
    return spec;
}

std::vector<std::vector<double>> synth_centroids(const SynthSpec& spec) {
    Rng rng(derive_seed(spec.seed, {kCentroidStream}));
    std::vector<std::vector<double>> out(spec.num_classes, std::vector<double>(spec.dim()));
    for (auto& row : out)
        for (auto& v : row) v = spec.separation * rng.normal();
    return out;
}

SynthVideo synth_video(const SynthSpec& spec, const std::string& split, std::size_t index) {
    spec.validate();
    const auto centroids = synth_centroids(spec);
    const auto patterns = au_patterns(spec);
    Rng rng(derive_seed(spec.seed, {split_code(split), index}));
    const std::size_t T = spec.frames, d = spec.dim();

    // Segment classes; the first segments of a video walk a rotation of all
    // classes so short splits still contain every class.
    std::vector<int> cls(T);
    const std::size_t rotation = rng.below(spec.num_classes);
    for (std::size_t t = 0, seg = 0; t < T; ++seg) {
        const std::size_t len = spec.segment_min + rng.below(spec.segment_max - spec.segment_min + 1);
        const int c = seg < spec.num_classes && spec.class_skew == 0.0
                          ? static_cast<int>((rotation + seg) % spec.num_classes)
                          : draw_class(spec, rng);
        for (std::size_t k = 0; k < len && t < T; ++k, ++t) cls[t] = c;
    }

    SynthVideo out;
    out.features.video_id = video_name(split, index);
    out.features.dim = d;
    out.features.features.resize(T * d);
    const double innov = std::sqrt(1.0 - spec.smoothing * spec.smoothing);
    std::vector<double> e(d, 0.0);
    for (auto& v : e) v = spec.noise * rng.normal();
    double va_e[2] = {spec.va_noise * rng.normal(), spec.va_noise * rng.normal()};
    for (std::size_t t = 0; t < T; ++t) {
        out.features.frame_ids.push_back(t);
        if (t > 0) {
            for (auto& v : e) v = spec.smoothing * v + innov * spec.noise * rng.normal();
            for (auto& v : va_e) v = spec.smoothing * v + innov * spec.va_noise * rng.normal();
        }
        const auto c = static_cast<std::size_t>(cls[t]);
        for (std::size_t j = 0; j < d; ++j) {
            // Stored as float32; round here so in-memory and on-disk agree.
            out.features.features[t * d + j] = static_cast<float>(centroids[c][j] + e[j]);
        }
        double va[2];
        for (int k = 0; k < 2; ++k) va[k] = std::clamp(kVaAnchors[c][k] + va_e[k], -1.0, 1.0);
        int au[kNumActionUnits];
        for (std::size_t u = 0; u < kNumActionUnits; ++u) au[u] = rng.bernoulli(patterns[c][u] ? spec.au_on : spec.au_off);
        const bool valid = !(spec.unannotated > 0.0 && rng.bernoulli(spec.unannotated));
        out.labels.push_frame(t, va, cls[t], au, valid);
    }
    return out;
}

SynthSummary synthesize_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    SynthSummary summary;
    for (const std::string split : {"train", "val"}) {
        const std::size_t n = split == "train" ? spec.videos : spec.val_videos;
        if (n == 0) continue;
        const auto dir = out_dir / split;
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
        DatasetManifest manifest{split, spec.stream_dims, {}};
        for (std::size_t i = 0; i < n; ++i) {
            SynthVideo v = synth_video(spec, split, i);
            VideoRecord rec{v.features.video_id, {}, std::filesystem::path(split) / (v.features.video_id + ".labels")};
            std::size_t offset = 0;
            for (std::size_t s = 0; s < spec.stream_dims.size(); ++s) {
                FeatureSequence stream;
                stream.video_id = v.features.video_id;
                stream.frame_ids = v.features.frame_ids;
                stream.dim = spec.stream_dims[s];
                for (std::size_t t = 0; t < v.features.length(); ++t) {
                    const auto row = v.features.features.begin() + static_cast<long>(t * v.features.dim + offset);
                    stream.features.insert(stream.features.end(), row, row + static_cast<long>(stream.dim));
                }
                offset += stream.dim;
                const auto name = v.features.video_id + ".s" + std::to_string(s) + ".afsq";
                write_feature_file(dir / name, stream);
                rec.feature_paths.push_back(std::filesystem::path(split) / name);
            }
            write_label_file(out_dir / rec.label_path, v.labels);
            manifest.records.push_back(std::move(rec));
            ++summary.videos;
            summary.frames += v.labels.length();
            for (std::size_t t = 0; t < v.labels.length(); ++t)
                if (v.labels.expr_valid(t)) ++summary.class_histogram[static_cast<std::size_t>(v.labels.expr[t])];
        }
        write_manifest(out_dir / (split + ".manifest"), manifest);
    }
    return summary;
}

}  // namespace affect
